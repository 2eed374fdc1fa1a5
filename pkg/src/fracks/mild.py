"""Duhamel operators, Picard iteration and an exponential-integrator oracle.

All time integrals have the form int_0^t exp(-lam (t - s)) f(s) ds per Fourier
mode. The history f is interpolated linearly between nodes and each segment
is integrated exactly against the exponential (product quadrature), so the
kernel singularities at s = t never have to be sampled. Running the sum
recursively over nodes makes a full-history integral cost O(M) transforms.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .feasibility import ExponentProfile
from .spectral import Field, Grid, GridMismatchError, SystemParams, VectorField, gradient, lp_norm


class SolverDivergence(RuntimeError):
    """Non-finite values or runaway growth; ``index`` is the iteration or step."""

    def __init__(self, message: str, index: int):
        super().__init__(f"{message} (at index {index})")
        self.index = index


@dataclass(frozen=True)
class TimeGrid:
    """Strictly increasing time nodes starting at 0."""

    nodes: tuple[float, ...]
    node_rule: str = "custom"

    def __post_init__(self):
        n = np.asarray(self.nodes, dtype=float)
        if n.size < 2:
            raise ValueError("a time grid needs at least two nodes")
        if n[0] != 0.0:
            raise ValueError("the first node must be t = 0")
        if np.any(np.diff(n) <= 0):
            raise ValueError("time nodes must be strictly increasing")

    @classmethod
    def build(cls, T: float, M: int = 33, rule: str = "graded", grading: float = 2.0) -> "TimeGrid":
        """Uniform nodes, or nodes T (j/(M-1))^grading clustered toward t = 0."""
        if not T > 0:
            raise ValueError(f"horizon T must be positive, got {T}")
        if M < 2:
            raise ValueError(f"need M >= 2 nodes, got {M}")
        s = np.linspace(0.0, 1.0, M)
        if rule == "uniform":
            nodes = T * s
        elif rule == "graded":
            nodes = T * s**grading
        else:
            raise ValueError(f"unknown node rule {rule!r}")
        nodes[-1] = T
        return cls(tuple(float(x) for x in nodes), rule)

    @property
    def T(self) -> float:
        return self.nodes[-1]

    @property
    def M(self) -> int:
        return len(self.nodes)

    @property
    def array(self) -> np.ndarray:
        return np.asarray(self.nodes)

    def index_of(self, t: float) -> int:
        j = int(np.argmin(np.abs(self.array - t)))
        if abs(self.nodes[j] - t) > 1e-12 * max(1.0, self.T):
            raise ValueError(f"t={t} is not a node of the time grid")
        return j


@dataclass(frozen=True)
class Trajectory:
    """Density, chemical gradient and (when known) chemical field at each node."""

    time_grid: TimeGrid
    rho: tuple[Field, ...]
    grad_c: tuple[VectorField, ...]
    c: tuple[Field, ...] | None = None

    def __post_init__(self):
        M = self.time_grid.M
        if len(self.rho) != M or len(self.grad_c) != M:
            raise ValueError("one field per node is required")
        if self.c is not None and len(self.c) != M:
            raise ValueError("one chemical field per node is required")
        g = self.rho[0].grid
        for f in list(self.rho) + list(self.grad_c) + list(self.c or ()):
            if f.grid != g:
                raise GridMismatchError("trajectory fields live on different grids")

    @property
    def grid(self) -> Grid:
        return self.rho[0].grid

    @property
    def times(self) -> np.ndarray:
        return self.time_grid.array


@dataclass
class PicardReport:
    iterations: int
    residual_history: list[float]
    converged: bool
    final_p_norm_envelope: float
    tol: float
    p: float
    message: str = ""
    ratios: list[float] = field(default_factory=list)

    def to_json(self, path=None) -> str:
        text = json.dumps(
            {
                "iterations": self.iterations,
                "residual_history": [float(x) for x in self.residual_history],
                "residual_ratios": [float(x) for x in self.ratios],
                "converged": self.converged,
                "final_p_norm_envelope": float(self.final_p_norm_envelope),
                "tol": self.tol,
                "p": float(self.p),
                "message": self.message,
            },
            indent=2,
            sort_keys=True,
        )
        if path is not None:
            Path(path).write_text(text + "\n")
        return text


# spectral plumbing on stacks of fields

def _rfft(grid: Grid, x: np.ndarray) -> np.ndarray:
    return np.fft.rfftn(x, axes=tuple(range(-grid.d, 0)))


def _irfft(grid: Grid, x: np.ndarray) -> np.ndarray:
    return np.fft.irfftn(x, s=grid.shape, axes=tuple(range(-grid.d, 0)))


def _ik(grid: Grid) -> np.ndarray:
    """(d, *spectral_shape) array of i k with Nyquist modes removed."""
    return np.stack([np.broadcast_to(1j * k, grid.spectral_shape) for k in grid.wavenumbers_odd])


def _phi_weights(z: np.ndarray):
    """exp(-z), phi1(z) = (1 - e^-z)/z and psi(z) = (1 - (1+z) e^-z)/z^2, stable near 0."""
    z = np.asarray(z, dtype=float)
    e = np.exp(-z)
    small = z < 1e-2
    zs = np.where(small, 1.0, z)
    phi1 = np.where(small, 0.0, -np.expm1(-zs) / zs)
    psi = np.where(small, 0.0, (-np.expm1(-zs) - zs * np.exp(-zs)) / zs**2)
    if np.any(small):
        zz = z[small] if z.ndim else z
        ser_phi, ser_psi = np.zeros_like(zz), np.zeros_like(zz)
        term = np.ones_like(zz)
        for m in range(8):
            ser_phi += term / math.factorial(m + 1)
            ser_psi += term * (m + 1) / math.factorial(m + 2)
            term = term * (-zz)
        if z.ndim:
            phi1[small] = ser_phi
            psi[small] = ser_psi
        else:
            phi1, psi = ser_phi, ser_psi
    return e, phi1, psi


def duhamel_history(src: np.ndarray, lam: np.ndarray, nodes) -> np.ndarray:
    """I(t_j) = int_0^t_j exp(-lam (t_j - s)) src(s) ds for every node.

    ``src`` has shape (M, ...) with the spectral axes last; ``lam`` broadcasts
    against one node slice. The source is linear between nodes and every
    segment is integrated exactly, so I is exact for piecewise-linear src.
    """
    nodes = np.asarray(nodes, dtype=float)
    out = np.zeros_like(src)
    for j in range(1, nodes.size):
        h = nodes[j] - nodes[j - 1]
        e, phi1, psi = _phi_weights(lam * h)
        out[j] = e * out[j - 1] + h * psi * src[j - 1] + h * (phi1 - psi) * src[j]
    return out


class _Operators:
    """Multipliers and transforms shared by the Duhamel operators on one grid."""

    def __init__(self, grid: Grid, params: SystemParams, dealias: bool = True):
        if params.d != grid.d:
            raise ValueError(f"params.d={params.d} does not match grid.d={grid.d}")
        if not params.tau > 0:
            raise ValueError("tau = 0 (parabolic-elliptic case) is not supported")
        self.grid = grid
        self.params = params
        self.ik = _ik(grid)
        self.lam_rho = grid.symbol(params.alpha)
        self.lam_chem = (params.gamma + grid.symbol(params.beta)) / params.tau
        self.mask = grid.dealias_mask if dealias else np.ones(grid.spectral_shape, dtype=bool)

    def chem_source(self, rho_hat: np.ndarray) -> np.ndarray:
        """(1/tau) i k rho_hat, stacked as (M, d, ...)."""
        return self.ik[None] * rho_hat[:, None] / self.params.tau

    def grad_chem_free(self, gradc0_hat: np.ndarray, nodes) -> np.ndarray:
        """exp(-gamma t/tau) K^beta_{t/tau} * grad c0 at every node."""
        t = np.asarray(nodes).reshape((-1,) + (1,) * (self.grid.d + 1))
        return np.exp(-t * self.lam_chem[None, None]) * gradc0_hat[None]

    def grad_chem(self, rho_hat: np.ndarray, gradc0_hat: np.ndarray | None, nodes) -> np.ndarray:
        g = duhamel_history(self.chem_source(rho_hat), self.lam_chem[None], nodes)
        if gradc0_hat is not None:
            g = g + self.grad_chem_free(gradc0_hat, nodes)
        return g

    def flux_divergence(self, u_hat: np.ndarray, g_hat: np.ndarray) -> np.ndarray:
        """-chi div(u g) per node, dealiased, as spectral arrays of shape (M, ...)."""
        u = _irfft(self.grid, u_hat * self.mask)
        g = _irfft(self.grid, g_hat * self.mask)
        f_hat = _rfft(self.grid, u[:, None] * g) * self.mask
        return -self.params.chi * np.sum(self.ik[None] * f_hat, axis=1)

    def outer(self, div_hat: np.ndarray, nodes) -> np.ndarray:
        return duhamel_history(div_hat, self.lam_rho, nodes)

    def free_rho(self, rho0_hat: np.ndarray, nodes) -> np.ndarray:
        t = np.asarray(nodes).reshape((-1,) + (1,) * self.grid.d)
        return np.exp(-t * self.lam_rho[None]) * rho0_hat[None]

    def chem_scalar(self, rho_hat: np.ndarray, c0_hat: np.ndarray, nodes) -> np.ndarray:
        t = np.asarray(nodes).reshape((-1,) + (1,) * self.grid.d)
        free = np.exp(-t * self.lam_chem[None]) * c0_hat[None]
        return free + duhamel_history(rho_hat / self.params.tau, self.lam_chem, nodes)


def _stack(fields) -> np.ndarray:
    return np.stack([f.values for f in fields])


def _rho_hat(traj: Trajectory) -> np.ndarray:
    return _rfft(traj.grid, _stack(traj.rho))


def _fields(grid: Grid, x_hat: np.ndarray) -> tuple[Field, ...]:
    x = _irfft(grid, x_hat)
    return tuple(Field(grid, v) for v in x)


def _vfields(grid: Grid, x_hat: np.ndarray) -> tuple[VectorField, ...]:
    x = _irfft(grid, x_hat)
    return tuple(VectorField(grid, v) for v in x)


def _as_gradient(chem0) -> VectorField:
    if isinstance(chem0, VectorField):
        return chem0
    if isinstance(chem0, Field):
        return gradient(chem0)
    raise TypeError("initial chemical data must be a Field (c0) or a VectorField (grad c0)")


def _check_same_grid(*objs):
    g = objs[0].grid
    for o in objs[1:]:
        if o.grid != g:
            raise GridMismatchError(f"{g} != {o.grid}")


# public operators

def initial_term_u1(rho0: Field, alpha: float, t: float) -> Field:
    from .spectral import semigroup_apply

    return semigroup_apply(rho0, alpha, t)


def gradc_duhamel(rho_history: Trajectory, gradc0: VectorField, params: SystemParams, t: float) -> VectorField:
    """grad c(t) from the chemical Duhamel formula driven by the rho history."""
    _check_same_grid(rho_history, gradc0)
    ops = _Operators(rho_history.grid, params)
    j = rho_history.time_grid.index_of(t)
    nodes = rho_history.time_grid.nodes[: j + 1]
    rho_hat = _rho_hat(rho_history)[: j + 1]
    g = ops.grad_chem(rho_hat, _rfft(gradc0.grid, gradc0.values), nodes)
    return VectorField(gradc0.grid, _irfft(gradc0.grid, g[j]))


def c_duhamel(rho_history: Trajectory, c0: Field, params: SystemParams, t: float) -> Field:
    """Scalar analogue of gradc_duhamel, giving c(t) itself."""
    _check_same_grid(rho_history, c0)
    ops = _Operators(rho_history.grid, params)
    j = rho_history.time_grid.index_of(t)
    nodes = rho_history.time_grid.nodes[: j + 1]
    c = ops.chem_scalar(_rho_hat(rho_history)[: j + 1], _rfft(c0.grid, c0.values), nodes)
    return Field(c0.grid, _irfft(c0.grid, c[j]))


def bilinear_A(u: Trajectory, v: Trajectory, params: SystemParams, t: float, dealias: bool = True) -> Field:
    """-chi int_0^t grad K^alpha_{t-s} * (u(s) [inner chemical Duhamel of v](s)) ds."""
    if u.time_grid != v.time_grid:
        raise ValueError("node mismatch between the two trajectories")
    _check_same_grid(u, v)
    ops = _Operators(u.grid, params, dealias)
    j = u.time_grid.index_of(t)
    nodes = u.time_grid.nodes[: j + 1]
    g = ops.grad_chem(_rho_hat(v)[: j + 1], None, nodes)
    out = ops.outer(ops.flux_divergence(_rho_hat(u)[: j + 1], g), nodes)
    return Field(u.grid, _irfft(u.grid, out[j]))


def linear_L(u: Trajectory, gradc0: VectorField, params: SystemParams, t: float, dealias: bool = True) -> Field:
    """-chi int_0^t grad K^alpha_{t-s} * (u(s) exp(-gamma s/tau) K^beta_{s/tau} * grad c0) ds."""
    _check_same_grid(u, gradc0)
    ops = _Operators(u.grid, params, dealias)
    j = u.time_grid.index_of(t)
    nodes = u.time_grid.nodes[: j + 1]
    g = ops.grad_chem_free(_rfft(gradc0.grid, gradc0.values), nodes)
    out = ops.outer(ops.flux_divergence(_rho_hat(u)[: j + 1], g), nodes)
    return Field(u.grid, _irfft(u.grid, out[j]))


def _sup_lp(grid: Grid, x_hat: np.ndarray, p: float) -> float:
    x = _irfft(grid, x_hat)
    return max(lp_norm(Field(grid, v), p) for v in x)


def picard_solve(rho0: Field, chem0, params: SystemParams, exps: ExponentProfile, time_grid: TimeGrid,
                 tol: float = 1e-12, max_iter: int = 50, dealias: bool = True,
                 allow_outside_theory: bool = False) -> tuple[Trajectory, PicardReport]:
    """Fixed point of u = u1 + A(u, u) + L(u) on the whole time grid.

    ``chem0`` is either c0 (a Field) or grad c0 (a VectorField). With c0 the
    returned trajectory also carries c at every node.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    if not exps.accepted and not allow_outside_theory:
        raise ValueError(f"exponent profile rejected by the feasibility checks: {exps.violations}")
    gradc0 = _as_gradient(chem0)
    _check_same_grid(rho0, gradc0)
    grid = rho0.grid
    ops = _Operators(grid, params, dealias)
    nodes = time_grid.nodes
    p = float(exps.p)

    u1 = ops.free_rho(_rfft(grid, rho0.values), nodes)
    gc0_hat = _rfft(grid, gradc0.values)
    free_chem = ops.grad_chem_free(gc0_hat, nodes)
    u = u1
    history: list[float] = []
    converged = False
    message = ""
    for it in range(1, max_iter + 1):
        g = free_chem + duhamel_history(ops.chem_source(u), ops.lam_chem[None], nodes)
        u_new = u1 + ops.outer(ops.flux_divergence(u, g), nodes)
        if not np.all(np.isfinite(u_new)):
            raise SolverDivergence("non-finite Picard iterate", it)
        res = _sup_lp(grid, u_new - u, p)
        history.append(res)
        u = u_new
        if res <= tol:
            converged = True
            break
    else:
        message = f"no convergence after {max_iter} iterations, last residual {history[-1]:.3e}"

    g = free_chem + duhamel_history(ops.chem_source(u), ops.lam_chem[None], nodes)
    c = None
    if isinstance(chem0, Field):
        c = _fields(grid, ops.chem_scalar(u, _rfft(grid, chem0.values), nodes))
    rho = _fields(grid, u)
    traj = Trajectory(time_grid, rho, _vfields(grid, g), c)
    ratios = [b / a for a, b in zip(history[:-1], history[1:]) if a > 0]
    report = PicardReport(
        iterations=len(history),
        residual_history=history,
        converged=converged,
        final_p_norm_envelope=max(lp_norm(f, p) for f in rho),
        tol=tol,
        p=p,
        message=message,
        ratios=ratios,
    )
    return traj, report


def etd_solve(rho0: Field, chem0, params: SystemParams, dt: float, T: float, output_times=None,
              dealias: bool = True, growth_limit: float = 10.0) -> Trajectory:
    """First-order exponential integrator for the coupled system.

    Every output interval is split into equal substeps no longer than dt, so
    the trajectory lands exactly on ``output_times`` (default: multiples of dt).
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    if not T > 0:
        raise ValueError("T must be positive")
    grid = rho0.grid
    ops = _Operators(grid, params, dealias)
    scalar = isinstance(chem0, Field)
    if not scalar and not isinstance(chem0, VectorField):
        raise TypeError("initial chemical data must be a Field (c0) or a VectorField (grad c0)")
    _check_same_grid(rho0, chem0)
    gmax = float(np.max(np.abs(_as_gradient(chem0).values)))
    if dt > grid.h / (params.chi * gmax + 1e-12):
        raise ValueError(f"dt={dt} violates the sanity bound h/(chi |grad c|_inf) = {grid.h / (params.chi * gmax):.3e}")

    if output_times is None:
        n_steps = max(1, int(round(T / dt)))
        output_times = np.linspace(0.0, T, n_steps + 1)
    out_t = np.asarray(output_times, dtype=float)
    if out_t[0] != 0.0 or abs(out_t[-1] - T) > 1e-12 * T:
        raise ValueError("output_times must run from 0 to T")

    rho_hat = _rfft(grid, rho0.values)
    chem_hat = _rfft(grid, chem0.values)
    lam_chem = ops.lam_chem if scalar else ops.lam_chem[None]
    cache: dict[float, tuple] = {}

    def weights(h):
        if h not in cache:
            ea, pa, _ = _phi_weights(ops.lam_rho * h)
            eb, pb, _ = _phi_weights(lam_chem * h)
            cache[h] = (ea, h * pa, eb, h * pb)
        return cache[h]

    def snapshot():
        g_hat = ops.ik * chem_hat if scalar else chem_hat
        return (
            Field(grid, _irfft(grid, rho_hat)),
            VectorField(grid, _irfft(grid, g_hat)),
            Field(grid, _irfft(grid, chem_hat)) if scalar else None,
        )

    rhos, grads, cs = [], [], []
    r, g, c = snapshot()
    rhos.append(r), grads.append(g), cs.append(c)
    norm_prev = float(np.sqrt(np.sum(np.abs(rho_hat) ** 2)))
    step = 0
    for a, b in zip(out_t[:-1], out_t[1:]):
        nsub = max(1, math.ceil((b - a) / dt - 1e-9))
        h = (b - a) / nsub
        ea, wa, eb, wb = weights(h)
        for _ in range(nsub):
            step += 1
            g_hat = ops.ik * chem_hat if scalar else chem_hat
            n_hat = ops.flux_divergence(rho_hat[None], g_hat[None])[0]
            src = rho_hat / params.tau if scalar else ops.ik * rho_hat / params.tau
            rho_hat = ea * rho_hat + wa * n_hat
            chem_hat = eb * chem_hat + wb * src
            if not (np.all(np.isfinite(rho_hat)) and np.all(np.isfinite(chem_hat))):
                raise SolverDivergence("non-finite exponential-integrator state", step)
            norm = float(np.sqrt(np.sum(np.abs(rho_hat) ** 2)))
            if norm_prev > 0 and norm > growth_limit * norm_prev:
                raise SolverDivergence(f"norm grew by {norm / norm_prev:.1f}x in one step", step)
            norm_prev = norm
        r, g, c = snapshot()
        rhos.append(r), grads.append(g), cs.append(c)
    tg = TimeGrid(tuple(float(x) for x in out_t), "etd")
    return Trajectory(tg, tuple(rhos), tuple(grads), tuple(cs) if scalar else None)
