import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fracks.spectral import (
    Field,
    Grid,
    GridMismatchError,
    SystemParams,
    VectorField,
    divergence,
    fractional_laplacian,
    grad_semigroup_apply,
    gradient,
    integrate,
    lp_norm,
    read_snapshot,
    semigroup_apply,
    write_snapshot,
)

from conftest import gaussian_field


def test_grid_rejects_bad_sizes():
    with pytest.raises(ValueError):
        Grid(2, 48, 8.0)
    with pytest.raises(ValueError):
        Grid(2, 4, 8.0)
    with pytest.raises(ValueError):
        Grid(4, 16, 8.0)
    with pytest.raises(ValueError):
        Grid(2, 16, 0.0)


def test_grid_geometry():
    g = Grid(2, 16, 4.0)
    assert g.h == 0.5
    assert g.axis[0] == -4.0 and g.axis[-1] == 3.5
    assert g.spectral_shape == (16, 9)
    assert g.kabs[0, 0] == 0.0


def test_system_params_validation():
    SystemParams(2, 1.8, 2.0, gamma=0.5)
    with pytest.raises(ValueError, match="parabolic-elliptic"):
        SystemParams(2, 1.8, 2.0, tau=0.0)
    with pytest.raises(ValueError):
        SystemParams(2, 1.0, 2.0)
    with pytest.raises(ValueError):
        SystemParams(2, 1.8, 2.5)
    with pytest.raises(ValueError):
        SystemParams(2, 1.8, 2.0, chi=-1.0)


def test_field_is_read_only_and_finite(grid2):
    f = grid2.zeros()
    with pytest.raises(ValueError):
        f.values[0, 0] = 1.0
    bad = np.zeros(grid2.shape)
    bad[0, 0] = np.nan
    with pytest.raises(ValueError):
        Field(grid2, bad)


def test_grid_mismatch(grid2):
    other = Grid(2, 32, 8.0)
    with pytest.raises(GridMismatchError):
        grid2.zeros() + other.zeros()


@given(a=st.floats(0.1, 2.0), m=st.integers(1, 10))
def test_fractional_laplacian_plane_wave(a, m):
    g = Grid(1, 64, math.pi)
    x = g.axis
    f = Field(g, np.cos(m * x))
    out = fractional_laplacian(f, a)
    assert np.allclose(out.values, m**a * np.cos(m * x), atol=1e-12 * m**a)


@given(a=st.floats(1.05, 2.0), t=st.floats(0.01, 2.0), s=st.floats(0.01, 2.0))
def test_semigroup_composition(a, t, s):
    g = Grid(2, 32, 6.0)
    f = Field(g, gaussian_field(g, 0.8))
    lhs = semigroup_apply(semigroup_apply(f, a, t), a, s)
    rhs = semigroup_apply(f, a, t + s)
    assert np.max(np.abs(lhs.values - rhs.values)) <= 1e-13


def test_semigroup_identity_and_mass(grid2):
    f = Field(grid2, gaussian_field(grid2))
    assert np.array_equal(semigroup_apply(f, 1.5, 0.0).values, f.values)
    m = integrate(f)
    assert abs(integrate(semigroup_apply(f, 1.5, 3.0)) - m) <= 1e-13 * m
    with pytest.raises(ValueError):
        semigroup_apply(f, 1.5, -1.0)


def test_gradient_divergence_laplacian(grid2):
    f = Field(grid2, gaussian_field(grid2, 0.9))
    lap = divergence(gradient(f))
    assert np.max(np.abs(lap.values + fractional_laplacian(f, 2.0).values)) < 1e-10


def test_grad_semigroup_commutes(grid2):
    f = Field(grid2, gaussian_field(grid2, 0.9))
    a = grad_semigroup_apply(f, 1.7, 0.4)
    b = gradient(semigroup_apply(f, 1.7, 0.4))
    assert np.max(np.abs(a.values - b.values)) < 1e-13


@pytest.mark.parametrize("p", [1.0, 2.0, 3.5])
def test_lp_norm_single_cell(grid2, p):
    v = np.zeros(grid2.shape)
    v[3, 5] = -1.0
    assert math.isclose(lp_norm(Field(grid2, v), p), grid2.h ** (grid2.d / p), rel_tol=1e-14)
    assert lp_norm(Field(grid2, v), math.inf) == 1.0


def test_lp_norm_rejects_small_p(grid2):
    with pytest.raises(ValueError):
        lp_norm(grid2.zeros(), 0.5)


def test_vector_field_magnitude(grid2):
    x = np.ones(grid2.shape)
    v = VectorField.from_components([Field(grid2, 3 * x), Field(grid2, 4 * x)])
    assert np.allclose(v.magnitude().values, 5.0)


def test_snapshot_round_trip(tmp_path, grid2, rng):
    f = Field(grid2, rng.normal(size=grid2.shape))
    write_snapshot(f, tmp_path / "rho_0001", 0.25, "rho")
    g, t, name = read_snapshot(tmp_path / "rho_0001")
    assert np.array_equal(g.values, f.values) and t == 0.25 and name == "rho"
    assert g.grid == grid2
