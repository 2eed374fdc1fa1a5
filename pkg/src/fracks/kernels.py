"""Real-space fractional heat kernel and the norms used to probe it.

The kernel of exp(-t Lambda^alpha) is radial. Its value at |x| = R is the
Hankel-type integral

    K_t(R) = (2 pi)^(-d/2) R^(1 - d/2) int_0^inf exp(-t r^alpha) r^(d/2) J_(d/2-1)(r R) dr

which is integrated panel by panel between half periods of the Bessel factor.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate, special

from .spectral import Field, Grid, lp_norm

QUAD_TOL = 1e-10


class KernelQuadratureError(RuntimeError):
    """Hankel quadrature failed to reach the requested absolute tolerance."""

    def __init__(self, message: str, achieved: float):
        super().__init__(f"{message} (achieved error estimate {achieved:.3e})")
        self.achieved = achieved


class GridTooSmallError(ValueError):
    """The lattice cannot represent the kernel at the requested times."""


@dataclass(frozen=True)
class KernelQuery:
    alpha: float
    t: float
    radius: float
    d: int

    def __post_init__(self):
        if not self.t > 0:
            raise ValueError(f"t must be positive, got {self.t}")
        if not 0 < self.alpha <= 2:
            raise ValueError(f"alpha must lie in (0, 2], got {self.alpha}")
        if self.radius < 0:
            raise ValueError(f"radius must be >= 0, got {self.radius}")
        if self.d not in (1, 2, 3):
            raise ValueError(f"d must be 1, 2 or 3, got {self.d}")


@dataclass(frozen=True)
class WeightedNorm:
    exponent: float
    value: float


def kernel_at_origin(alpha: float, t: float, d: int) -> float:
    """Closed form K_t(0) = 2 Gamma(d/alpha) / (alpha (4 pi)^(d/2) Gamma(d/2) t^(d/alpha))."""
    return 2.0 * math.gamma(d / alpha) / (
        alpha * (4.0 * math.pi) ** (d / 2) * math.gamma(d / 2) * t ** (d / alpha)
    )


def _radial_integrand(alpha, t, R, d):
    # trig forms of the half-integer Bessel functions keep r = 0 finite
    if d == 1:
        return lambda r: math.exp(-t * r**alpha) * math.cos(r * R) / math.pi
    if d == 2:
        return lambda r: math.exp(-t * r**alpha) * r * special.j0(r * R) / (2.0 * math.pi)
    return lambda r: math.exp(-t * r**alpha) * r * math.sin(r * R) / (2.0 * math.pi**2 * R)


def eval_kernel(q: KernelQuery, tol: float = QUAD_TOL) -> float:
    """K^alpha_t at |x| = q.radius under the unit-mass normalization."""
    if q.radius == 0.0:
        return kernel_at_origin(q.alpha, q.t, q.d)
    f = _radial_integrand(q.alpha, q.t, q.radius, q.d)
    # beyond r_max the damping factor is below 1e-22
    r_max = (50.0 / q.t) ** (1.0 / q.alpha)
    step = min(math.pi / q.radius, r_max)
    n_panels = max(1, math.ceil(r_max / step))
    edges = np.minimum(np.arange(n_panels + 1) * step, r_max)
    total, err = 0.0, 0.0
    for a, b in zip(edges[:-1], edges[1:]):
        if b <= a:
            break
        val, e = integrate.quad(f, a, b, epsabs=tol * 1e-3, epsrel=1e-13, limit=200)
        total += val
        err += e
    # tail bound past r_max, |Bessel factor| <= 1 up to the radial weight
    tail = math.exp(-q.t * r_max**q.alpha) * max(r_max, 1.0) ** 2
    err += tail
    if err > tol:
        raise KernelQuadratureError(
            f"kernel quadrature at alpha={q.alpha}, t={q.t}, |x|={q.radius} did not converge", err
        )
    return total


def kernel_values(alpha: float, t: float, radii, d: int, tol: float = QUAD_TOL) -> np.ndarray:
    """eval_kernel over an array of radii, evaluating each distinct radius once."""
    radii = np.asarray(radii, dtype=float)
    uniq, inv = np.unique(radii, return_inverse=True)
    vals = np.array([eval_kernel(KernelQuery(alpha, t, float(r), d), tol) for r in uniq])
    return vals[inv].reshape(radii.shape)


def heat_kernel_exact(t: float, r, d: int):
    """Gaussian kernel (4 pi t)^(-d/2) exp(-r^2 / 4t) of exp(t Delta)."""
    r = np.asarray(r, dtype=float)
    return (4.0 * math.pi * t) ** (-d / 2) * np.exp(-(r**2) / (4.0 * t))


def poisson_kernel_exact(t: float, r, d: int):
    """Poisson kernel Gamma((d+1)/2) pi^(-(d+1)/2) t / (t^2 + r^2)^((d+1)/2)."""
    r = np.asarray(r, dtype=float)
    c = math.gamma((d + 1) / 2) / math.pi ** ((d + 1) / 2)
    return c * t / (t**2 + r**2) ** ((d + 1) / 2)


def sampled_kernel(grid: Grid, alpha: float, t: float) -> Field:
    """Lattice propagator: the periodic, band-limited kernel of exp(-t Lambda^alpha).

    Obtained as the inverse transform of exp(-t |k|^alpha) divided by h^d, with
    the origin moved to the lattice point x = 0.
    """
    if not t > 0:
        raise ValueError(f"t must be positive, got {t}")
    raw = np.fft.irfftn(np.exp(-t * grid.symbol(alpha)), s=grid.shape, axes=tuple(range(grid.d))) / grid.cell_volume
    return Field(grid, np.fft.fftshift(raw))


def _tail_share(k: Field, p: float) -> float:
    """Share of int |K|^p (or of max |K|) carried by the outer frame |x|_inf >= 0.9 L."""
    g = k.grid
    frame = np.zeros(g.shape, dtype=bool)
    for c in g.coords:
        frame |= np.broadcast_to(np.abs(c) >= 0.9 * g.L, g.shape)
    a = np.abs(k.values)
    if math.isinf(p):
        return float(a[frame].max() / a.max())
    return float(np.sum(a[frame] ** p) / np.sum(a**p))


def fit_power_law(times, values) -> float:
    """Least-squares slope of log(values) against log(times)."""
    x = np.log(np.asarray(times, dtype=float))
    y = np.log(np.asarray(values, dtype=float))
    slope, _ = np.polyfit(x, y, 1)
    return float(slope)


def kernel_norms(alpha: float, p: float, grid: Grid, t_list, tail_tol: float = 1e-3) -> np.ndarray:
    """||K_t||_{L^p} on the lattice for each t, guarding resolution and periodization."""
    t_list = np.asarray(t_list, dtype=float)
    if t_list.size < 2 or np.any(t_list <= 0):
        raise ValueError("t_list needs at least two positive times")
    kmax = math.pi * grid.n / (2.0 * grid.L)
    outer = np.zeros(grid.spectral_shape, dtype=bool)
    for k in grid.wavenumbers:
        outer |= np.broadcast_to(np.abs(k) >= 0.9 * kmax, grid.spectral_shape)
    mult = np.exp(-t_list.min() * grid.symbol(alpha))
    spectral_share = float(mult[outer].sum() / mult.sum())
    if spectral_share > tail_tol:
        raise GridTooSmallError(
            f"lattice too coarse for t={t_list.min()}: outer spectral band carries "
            f"{spectral_share:.2e} of the multiplier"
        )
    norms = []
    for t in t_list:
        k = sampled_kernel(grid, alpha, float(t))
        share = _tail_share(k, p)
        if share > tail_tol:
            raise GridTooSmallError(
                f"domain too small for t={t}: boundary frame carries {share:.2e} of the L^{p} mass"
            )
        norms.append(lp_norm(k, p))
    return np.array(norms)


def kernel_norm_scaling_check(alpha: float, p: float, d: int, t_list, grid: Grid | None = None,
                              tail_tol: float = 1e-3) -> float:
    """Fitted exponent of t -> ||K^alpha_t||_{L^p}; theory gives -(d/alpha)(1 - 1/p)."""
    if grid is None:
        grid = Grid(d, 256 if d == 2 else (2048 if d == 1 else 64), 16.0)
    if grid.d != d:
        raise ValueError("grid dimension does not match d")
    return fit_power_law(t_list, kernel_norms(alpha, p, grid, t_list, tail_tol))


def theoretical_norm_exponent(alpha: float, p: float, d: int) -> float:
    return -(d / alpha) * (1.0 - 1.0 / float(p))


def weighted_norm(f: Field, a: float) -> WeightedNorm:
    """sup over the lattice of (1 + |x|)^(a + d) |f|."""
    d = f.grid.d
    w = (1.0 + f.grid.radius) ** (a + d)
    return WeightedNorm(exponent=a + d, value=float(np.max(w * np.abs(f.values))))


def moment(f: Field, theta: float, a: float) -> float:
    """Lattice quadrature of int |x|^theta f dx, defined for 0 <= theta < a."""
    if not 0 <= theta < a:
        raise ValueError(f"moment order theta={theta} must lie in [0, {a})")
    r = f.grid.radius
    w = np.ones_like(r) if theta == 0 else r**theta
    return float(f.grid.cell_volume * np.sum(w * f.values))
