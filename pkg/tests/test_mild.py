import math

import numpy as np
import pytest
from hypothesis import given
from scipy.integrate import quad
from hypothesis import strategies as st

from fracks.feasibility import build_profile
from fracks.mild import (
    SolverDivergence,
    TimeGrid,
    Trajectory,
    _phi_weights,
    bilinear_A,
    duhamel_history,
    etd_solve,
    gradc_duhamel,
    initial_term_u1,
    linear_L,
    picard_solve,
)
from fracks.spectral import Field, Grid, SystemParams, gradient, integrate, lp_norm, semigroup_apply

from conftest import gaussian_field

PARAMS = SystemParams(2, 1.8, 2.0, chi=1.0, gamma=0.5, tau=1.0)
EXPS = build_profile(PARAMS, 1.5, 4.0)


def small_data(grid, mass_rho=0.1, mass_c=0.1):
    r = gaussian_field(grid, 0.5)
    c = gaussian_field(grid, 0.7)
    v = grid.cell_volume
    return Field(grid, mass_rho * r / (v * r.sum())), Field(grid, mass_c * c / (v * c.sum()))


def test_time_grid_validation():
    with pytest.raises(ValueError):
        TimeGrid((0.0,))
    with pytest.raises(ValueError):
        TimeGrid((0.1, 0.2))
    with pytest.raises(ValueError):
        TimeGrid((0.0, 0.2, 0.2))
    with pytest.raises(ValueError):
        TimeGrid.build(-1.0)
    tg = TimeGrid.build(2.0, 5, "graded")
    assert tg.nodes[0] == 0.0 and tg.T == 2.0 and np.all(np.diff(tg.array) > 0)
    assert tg.index_of(2.0) == 4
    with pytest.raises(ValueError):
        tg.index_of(1.3)


@given(z=st.floats(1e-6, 50.0))
def test_phi_weights_match_direct_formulas(z):
    e, phi1, psi = _phi_weights(np.array([z]))
    if z > 1e-2:
        assert math.isclose(phi1[0], (1 - math.exp(-z)) / z, rel_tol=1e-12)
        assert math.isclose(psi[0], (1 - (1 + z) * math.exp(-z)) / z**2, rel_tol=1e-9)
    assert 0 < psi[0] < phi1[0] <= 1


def test_phi_weights_continuous_at_switch():
    lo = _phi_weights(np.array([1e-2 * (1 - 1e-12)]))
    hi = _phi_weights(np.array([1e-2 * (1 + 1e-12)]))
    assert abs(lo[1][0] - hi[1][0]) < 1e-13 and abs(lo[2][0] - hi[2][0]) < 1e-12


@given(lam=st.floats(0.0, 30.0), a=st.floats(-2, 2), b=st.floats(-2, 2))
def test_duhamel_history_exact_for_linear_source(lam, a, b):
    nodes = np.array([0.0, 0.1, 0.35, 0.5, 1.0])
    src = (a + b * nodes)[:, None]
    got = duhamel_history(src, np.array([lam]), nodes)[:, 0]
    want = [quad(lambda s: math.exp(-lam * (t - s)) * (a + b * s), 0.0, t, epsabs=1e-14, epsrel=1e-13)[0]
            for t in nodes]
    assert np.allclose(got, want, atol=1e-12, rtol=1e-10)


def test_decoupled_run_is_the_semigroup():
    grid = Grid(2, 64, 8.0)
    params = SystemParams(2, 1.6, 2.0, chi=0.0)
    rho0, c0 = small_data(grid)
    tg = TimeGrid.build(1.0, 9, "uniform")
    traj, rep = picard_solve(rho0, c0, params, build_profile(params, 1.5, 4.0), tg)
    assert rep.converged
    for t, f in zip(tg.nodes, traj.rho):
        assert np.max(np.abs(f.values - semigroup_apply(rho0, 1.6, t).values)) < 1e-14


def test_picard_conserves_mass_and_contracts():
    grid = Grid(2, 64, 8.0)
    rho0, c0 = small_data(grid)
    tg = TimeGrid.build(1.0, 17, "uniform")
    traj, rep = picard_solve(rho0, c0, PARAMS, EXPS, tg)
    assert rep.converged and rep.iterations < 10
    assert all(r < 1 for r in rep.ratios[1:])
    m0 = integrate(rho0)
    assert max(abs(integrate(f) - m0) for f in traj.rho) < 1e-12 * m0


def test_picard_fixed_point_identity():
    grid = Grid(2, 32, 8.0)
    rho0, c0 = small_data(grid)
    tg = TimeGrid.build(0.5, 9, "uniform")
    traj, _ = picard_solve(rho0, c0, PARAMS, EXPS, tg)
    gc0 = gradient(c0)
    t = 0.5
    rhs = initial_term_u1(rho0, PARAMS.alpha, t) + bilinear_A(traj, traj, PARAMS, t) + linear_L(traj, gc0, PARAMS, t)
    assert np.max(np.abs(rhs.values - traj.rho[-1].values)) < 1e-12
    g = gradc_duhamel(traj, gc0, PARAMS, t)
    assert np.max(np.abs(g.values - traj.grad_c[-1].values)) < 1e-13


def test_picard_against_refined_etd():
    grid = Grid(2, 64, 8.0)
    rho0, c0 = small_data(grid)
    tg = TimeGrid.build(1.0, 17, "uniform")
    traj, _ = picard_solve(rho0, c0, PARAMS, EXPS, tg)
    ref = etd_solve(rho0, c0, PARAMS, dt=1.0 / 64, T=1.0, output_times=tg.array)
    err = max(lp_norm(a - b, 2) for a, b in zip(traj.rho, ref.rho))
    assert err < 1e-4


def test_zero_data_gives_zero_trajectory():
    grid = Grid(2, 32, 8.0)
    tg = TimeGrid.build(1.0, 5, "uniform")
    traj, rep = picard_solve(grid.zeros(), grid.zeros(), PARAMS, EXPS, tg)
    assert rep.converged
    assert all(np.all(f.values == 0) for f in traj.rho)


def test_rejected_profile_needs_opt_in():
    grid = Grid(2, 32, 8.0)
    rho0, c0 = small_data(grid)
    bad = build_profile(PARAMS, 1.01, 1.02)
    tg = TimeGrid.build(0.2, 3, "uniform")
    with pytest.raises(ValueError):
        picard_solve(rho0, c0, PARAMS, bad, tg)
    traj, _ = picard_solve(rho0, c0, PARAMS, bad, tg, allow_outside_theory=True)
    assert isinstance(traj, Trajectory)


def test_etd_blows_up_on_huge_data():
    grid = Grid(2, 32, 8.0)
    rho0, c0 = small_data(grid, mass_rho=1e6, mass_c=1.0)
    with pytest.raises((SolverDivergence, ValueError)):
        etd_solve(rho0, c0, PARAMS, dt=0.05, T=1.0)


def test_etd_lands_on_output_times():
    grid = Grid(2, 32, 8.0)
    rho0, c0 = small_data(grid)
    out = np.array([0.0, 0.13, 0.5, 0.77])
    traj = etd_solve(rho0, c0, PARAMS, dt=0.05, T=0.77, output_times=out)
    assert np.array_equal(traj.times, out)
