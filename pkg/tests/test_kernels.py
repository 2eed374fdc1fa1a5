import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fracks.kernels import (
    GridTooSmallError,
    KernelQuery,
    eval_kernel,
    heat_kernel_exact,
    kernel_at_origin,
    kernel_norm_scaling_check,
    kernel_values,
    moment,
    poisson_kernel_exact,
    sampled_kernel,
    theoretical_norm_exponent,
    weighted_norm,
)
from fracks.spectral import Field, Grid, integrate

# frozen oracle: int |x| (4 pi)^{-1} exp(-|x|^2/4) dx over R^2 equals sqrt(pi)
GAUSSIAN_FIRST_MOMENT_2D = 1.7724538509055159


@pytest.mark.parametrize("d", [1, 2, 3])
def test_origin_value_matches_gaussian_and_poisson(d):
    assert math.isclose(kernel_at_origin(2.0, 0.7, d), heat_kernel_exact(0.7, 0.0, d), rel_tol=1e-14)
    assert math.isclose(kernel_at_origin(1.0, 0.7, d), poisson_kernel_exact(0.7, 0.0, d), rel_tol=1e-14)


@pytest.mark.parametrize("d", [1, 2, 3])
def test_hankel_quadrature_gaussian(d):
    r = np.array([0.1, 0.5, 1.0, 2.0, 3.5])
    assert np.max(np.abs(kernel_values(2.0, 1.0, r, d) - heat_kernel_exact(1.0, r, d))) < 1e-10


@pytest.mark.parametrize("d", [1, 2, 3])
def test_hankel_quadrature_poisson(d):
    r = np.array([0.2, 1.0, 2.5, 6.0])
    assert np.max(np.abs(kernel_values(1.0, 0.5, r, d) - poisson_kernel_exact(0.5, r, d))) < 1e-10


@given(t=st.floats(0.2, 3.0), r=st.floats(0.0, 3.0))
def test_self_similarity(t, r):
    a, d = 1.5, 2
    lhs = eval_kernel(KernelQuery(a, t, r, d))
    rhs = t ** (-d / a) * eval_kernel(KernelQuery(a, 1.0, r * t ** (-1 / a), d))
    assert abs(lhs - rhs) <= 1e-9 * max(1.0, abs(rhs))


@pytest.mark.parametrize("alpha", [0.7, 1.2, 1.9])
def test_kernel_positive(alpha):
    r = np.linspace(0.0, 5.0, 11)
    assert np.all(kernel_values(alpha, 1.0, r, 2) > 0)


def test_query_validation():
    with pytest.raises(ValueError):
        KernelQuery(1.5, 0.0, 1.0, 2)
    with pytest.raises(ValueError):
        KernelQuery(2.5, 1.0, 1.0, 2)
    with pytest.raises(ValueError):
        KernelQuery(1.5, 1.0, -1.0, 2)


def test_sampled_kernel_unit_mass_and_gaussian():
    g = Grid(2, 128, 16.0)
    k = sampled_kernel(g, 2.0, 1.0)
    assert abs(integrate(k) - 1.0) < 1e-13
    assert np.max(np.abs(k.values - heat_kernel_exact(1.0, g.radius, 2))) < 1e-12


def test_gaussian_first_moment_oracle():
    # the |x| weight has a kink at the origin, so the lattice rule converges like h^3
    errs = []
    for n in (128, 256):
        k = sampled_kernel(Grid(2, n, 16.0), 2.0, 1.0)
        errs.append(abs(moment(k, 1.0, 2.0) - GAUSSIAN_FIRST_MOMENT_2D))
    assert errs[1] < 1e-4
    assert errs[1] < errs[0] / 4


def test_moment_order_guard():
    g = Grid(2, 32, 8.0)
    with pytest.raises(ValueError):
        moment(g.zeros(), 1.5, 1.5)


def test_weighted_norm_exponent():
    g = Grid(2, 32, 8.0)
    w = weighted_norm(Field(g, np.ones(g.shape)), 1.5)
    assert w.exponent == 3.5
    assert math.isclose(w.value, (1.0 + g.radius.max()) ** 3.5)


def test_theoretical_exponent():
    assert theoretical_norm_exponent(2.0, math.inf, 2) == -1.0
    assert math.isclose(theoretical_norm_exponent(1.5, 2.0, 2), -2.0 / 3.0)


def test_scaling_fit_gaussian_sup():
    g = Grid(2, 128, 16.0)
    slope = kernel_norm_scaling_check(2.0, math.inf, 2, np.geomspace(0.5, 2.0, 6), grid=g)
    assert abs(slope + 1.0) < 0.02


def test_too_small_time_is_refused():
    g = Grid(2, 32, 8.0)
    with pytest.raises(GridTooSmallError):
        kernel_norm_scaling_check(1.0, math.inf, 2, [1e-3, 2e-3], grid=g)
