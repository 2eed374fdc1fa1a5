"""Checks of the conservation laws, decay envelopes and positivity properties.

Also holds an independent real-space evaluation of (-Delta)^s through its
singular-integral (0 < s < 1) or fourth-difference (1 < s < 2) definition,
used to cross-check the spectral multiplier.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage, special

from .feasibility import ExponentProfile
from .kernels import fit_power_law
from .mild import Trajectory
from .spectral import Field, SystemParams, divergence, fractional_laplacian, gradient, integrate, lp_norm


def chemical_mass_closed_form(m0: float, c0_mass: float, gamma: float, tau: float, t: float) -> float:
    """int c(t) = m0 (1 - e^{-gamma t/tau})/gamma + c0_mass e^{-gamma t/tau}; m0 t/tau + c0_mass at gamma = 0."""
    if not tau > 0:
        raise ValueError("tau must be positive")
    if t < 0:
        raise ValueError("t must be >= 0")
    if gamma == 0:
        return m0 * t / tau + c0_mass
    x = gamma * t / tau
    return m0 * (-math.expm1(-x)) / gamma + c0_mass * math.exp(-x)


# time series

def gradc_envelope_power(params: SystemParams, r: float) -> float:
    """Exponent 1 - (d/r + 1)/alpha weighting ||grad c||_{L^r}."""
    ir = 0.0 if math.isinf(r) else 1.0 / r
    return 1.0 - (params.d * ir + 1.0) / params.alpha


def _negative(f: Field) -> Field:
    return Field(f.grid, np.maximum(-f.values, 0.0))


def _vector_lp(v, p) -> float:
    return lp_norm(v.magnitude(), p)


@dataclass
class DiagnosticsRecord:
    """One row per trajectory node; ``columns`` fixes the CSV order."""

    times: np.ndarray
    columns: dict[str, np.ndarray]
    sigma: float
    p: float
    r: float
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.times)

    def column(self, name: str) -> np.ndarray:
        return self.columns[name]

    @property
    def header(self) -> list[str]:
        return list(self.columns)


def _weighted(t: np.ndarray, power: float, y: np.ndarray) -> np.ndarray:
    # a negative power (outside-theory profiles only) is undefined at t = 0
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(t > 0, np.abs(t) ** power, 1.0 if power == 0 else (0.0 if power > 0 else np.nan)) * y


def _fmt_p(p: float) -> str:
    return "inf" if math.isinf(p) else f"{p:g}"


def build_record(traj: Trajectory, exps: ExponentProfile, params: SystemParams,
                 extra_ps=(1.0, 2.0, math.inf)) -> DiagnosticsRecord:
    """Masses, norms, envelopes and negative parts at every node.

    Columns, in order: t, mass_rho, mass_c, rho_L<q> for q in (p, extra_ps),
    t^sigma*rho_L<p>, gradc_L<r>, t^kappa*gradc_L<r>, c_L<r>, c_W1<r>,
    min_rho, rho_minus_L<p>, min_c, max_c, c_minus_L<p>; kappa = 1 - (d/r+1)/alpha.
    Chemical columns are NaN when the trajectory does not carry c.
    """
    t = traj.times
    p, r, sigma = float(exps.p), float(exps.r), float(exps.sigma)
    kappa = gradc_envelope_power(params, r)
    ps = [p] + [q for q in extra_ps if q != p]
    cols: dict[str, np.ndarray] = {"t": t.copy()}
    cols["mass_rho"] = np.array([integrate(f) for f in traj.rho])
    has_c = traj.c is not None
    nan = np.full(t.shape, np.nan)
    cols["mass_c"] = np.array([integrate(f) for f in traj.c]) if has_c else nan
    for q in ps:
        cols[f"rho_L{_fmt_p(q)}"] = np.array([lp_norm(f, q) for f in traj.rho])
    cols[f"t^sigma*rho_L{_fmt_p(p)}"] = _weighted(t, sigma, cols[f"rho_L{_fmt_p(p)}"])
    g = np.array([_vector_lp(v, r) for v in traj.grad_c])
    cols[f"gradc_L{_fmt_p(r)}"] = g
    cols[f"t^kappa*gradc_L{_fmt_p(r)}"] = _weighted(t, kappa, g)
    if has_c:
        cl = np.array([lp_norm(f, r) for f in traj.c])
        cols[f"c_L{_fmt_p(r)}"] = cl
        cols[f"c_W1{_fmt_p(r)}"] = cl + g
    else:
        cols[f"c_L{_fmt_p(r)}"] = nan
        cols[f"c_W1{_fmt_p(r)}"] = nan
    cols["min_rho"] = np.array([f.values.min() for f in traj.rho])
    cols[f"rho_minus_L{_fmt_p(p)}"] = np.array([lp_norm(_negative(f), p) for f in traj.rho])
    cols["min_c"] = np.array([f.values.min() for f in traj.c]) if has_c else nan
    cols["max_c"] = np.array([f.values.max() for f in traj.c]) if has_c else nan
    cols[f"c_minus_L{_fmt_p(p)}"] = (
        np.array([lp_norm(_negative(f), p) for f in traj.c]) if has_c else nan
    )
    meta = {"kappa": kappa, "d": params.d, "alpha": params.alpha, "beta": params.beta}
    return DiagnosticsRecord(t.copy(), cols, sigma, p, r, meta)


def fit_decay_exponent(times, values) -> float:
    return fit_power_law(times, values)


@dataclass(frozen=True)
class EnvelopeReport:
    t_min: float
    rho_envelope_at_tmin: float
    rho_envelope_sup: float
    gradc_envelope_at_tmin: float
    gradc_envelope_sup: float
    rho_nonincreasing: bool
    gradc_nonincreasing: bool

    def within(self, factor: float) -> bool:
        """Both envelopes stay below factor times their value at t_min."""
        ok_rho = self.rho_envelope_sup <= factor * self.rho_envelope_at_tmin
        ok_g = self.gradc_envelope_sup <= factor * self.gradc_envelope_at_tmin
        return bool(ok_rho and ok_g)


def _nonincreasing(x: np.ndarray, slack: float) -> bool:
    running = np.maximum.accumulate(x)
    return bool(np.all(x <= running[0] * (1 + slack)) and np.all(x[1:] <= running[:-1] * (1 + slack)))


def decay_envelope_check(traj: Trajectory, exps: ExponentProfile, params: SystemParams,
                         t_min: float = 1.0, slack: float = 0.05) -> EnvelopeReport:
    """Sup over [t_min, T] of t^sigma ||rho||_p and t^kappa ||grad c||_r.

    ``*_nonincreasing`` asks that no later value exceeds an earlier one by
    more than ``slack``; the theory only guarantees boundedness.
    """
    t = traj.times
    if t[-1] < t_min:
        raise ValueError(f"trajectory ends at T={t[-1]} before t_min={t_min}")
    sel = t >= t_min - 1e-12
    kappa = gradc_envelope_power(params, float(exps.r))
    rho_env = np.array([lp_norm(f, float(exps.p)) for f, s in zip(traj.rho, sel) if s]) * t[sel] ** float(exps.sigma)
    g_env = np.array([_vector_lp(v, float(exps.r)) for v, s in zip(traj.grad_c, sel) if s]) * t[sel] ** kappa
    return EnvelopeReport(
        t_min=float(t[sel][0]),
        rho_envelope_at_tmin=float(rho_env[0]),
        rho_envelope_sup=float(rho_env.max()),
        gradc_envelope_at_tmin=float(g_env[0]),
        gradc_envelope_sup=float(g_env.max()),
        rho_nonincreasing=_nonincreasing(rho_env, slack),
        gradc_nonincreasing=_nonincreasing(g_env, slack),
    )


@dataclass(frozen=True)
class PositivityRow:
    t: float
    min_rho: float
    rho_minus: float
    rho_norm: float
    c_minus: float
    min_c: float
    max_c: float


def positivity_report(traj: Trajectory, p: float) -> list[PositivityRow]:
    """Per-node minimum of rho and lattice L^p norms of the negative parts."""
    if p < 2:
        raise ValueError("positivity checks use p >= 2")
    rows = []
    cs = traj.c if traj.c is not None else [None] * len(traj.rho)
    for t, f, c in zip(traj.times, traj.rho, cs):
        rows.append(
            PositivityRow(
                t=float(t),
                min_rho=float(f.values.min()),
                rho_minus=lp_norm(_negative(f), p),
                rho_norm=lp_norm(f, p),
                c_minus=lp_norm(_negative(c), p) if c is not None else math.nan,
                min_c=float(c.values.min()) if c is not None else math.nan,
                max_c=float(c.values.max()) if c is not None else math.nan,
            )
        )
    return rows


# real-space fractional Laplacian

def _difference_coefficients(m: int) -> dict[int, int]:
    """Weights (-1)^k C(2(m+1), m+1-k) of the order-2(m+1) centered difference."""
    return {k: (-1) ** k * math.comb(2 * (m + 1), m + 1 - k) for k in range(-m - 1, m + 2)}


def singular_integral_constant(d: int, s: float) -> float:
    """Normalization of the difference-quotient integral for (-Delta)^s, s = m + frac."""
    if s <= 0 or float(s).is_integer():
        raise ValueError(f"s must be positive and non-integer, got {s}")
    m = int(math.floor(s))
    total = sum((-1) ** k * math.comb(2 * (m + 1), m + 1 - k) * k ** (2 * s) for k in range(1, m + 2))
    return 4**s * math.gamma(d / 2 + s) / (math.pi ** (d / 2) * special.gamma(-s)) / total


def _half_sphere(d: int, n_theta: int):
    """Unit directions covering half of S^{d-1} with quadrature weights."""
    if d == 1:
        return np.array([[1.0]]), np.array([1.0])
    if d == 2:
        th = np.pi * np.arange(n_theta) / n_theta
        return np.stack([np.cos(th), np.sin(th)], axis=1), np.full(n_theta, np.pi / n_theta)
    raise NotImplementedError("the real-space cross-check supports d = 1 and d = 2")


class _Interpolant:
    """Band-limited interpolant of a lattice field, zero outside [-L, L)^d.

    The field is upsampled spectrally by zero padding and then read off with a
    quintic spline, which is accurate to far below the cross-check tolerance.
    """

    def __init__(self, f: Field, upsample: int = 8):
        g = f.grid
        self.grid = g
        n_fine = g.n * upsample
        fhat = np.fft.fftshift(np.fft.fftn(f.values))
        pad = [((n_fine - g.n) // 2, (n_fine - g.n) // 2)] * g.d
        fine = np.fft.ifftn(np.fft.ifftshift(np.pad(fhat, pad))).real * upsample**g.d
        self.h_fine = g.h / upsample
        self.coeffs = ndimage.spline_filter(fine, order=5, mode="grid-wrap")
        self.fhat = np.fft.fftn(f.values) / g.n**g.d
        m = np.fft.fftfreq(g.n, d=1.0 / g.n)
        self.k = np.pi * m / g.L

    def __call__(self, pts: np.ndarray) -> np.ndarray:
        g = self.grid
        idx = (pts + g.L) / self.h_fine
        out = ndimage.map_coordinates(self.coeffs, idx.T, order=5, mode="grid-wrap", prefilter=False)
        outside = np.any((pts < -g.L) | (pts >= g.L), axis=1)
        out[outside] = 0.0
        return out

    def directional_derivative(self, x: np.ndarray, e: np.ndarray, order: int) -> float:
        """Exact order-th derivative of the trigonometric interpolant along e at x."""
        g = self.grid
        ke = sum(np.meshgrid(*([self.k] * g.d), indexing="ij", sparse=True)[i] * e[i] for i in range(g.d))
        phase = sum(np.meshgrid(*([self.k] * g.d), indexing="ij", sparse=True)[i] * (x[i] + g.L) for i in range(g.d))
        return float(np.real(np.sum(self.fhat * (1j * ke) ** order * np.exp(1j * phase))))


def fractional_laplacian_quadrature(f: Field, s: float, probes: np.ndarray, n_theta: int = 48,
                                    gauss_points: int = 10) -> np.ndarray:
    """(-Delta)^s f at probe points from the real-space difference-quotient integral.

    Writes (c/2) int delta(x, y)/|y|^{d+2s} dy as c times an integral over half
    the directions and radii rho > 0. Near rho = 0 the difference is replaced by
    its two leading Taylor terms (exact spectral derivatives), the bulk uses
    composite Gauss-Legendre panels, and beyond the support the difference is
    the constant centre weight times f(x), integrated in closed form.
    """
    g = f.grid
    m = int(math.floor(s))
    coef = _difference_coefficients(m)
    c = singular_integral_constant(g.d, s)
    interp = _Interpolant(f)
    amax = np.abs(f.values).max()
    support = float(g.radius[np.abs(f.values) > 1e-14 * amax].max()) + g.h
    dirs, wdir = _half_sphere(g.d, n_theta)
    gx, gw = np.polynomial.legendre.leggauss(gauss_points)
    n0 = 2 * (m + 1)
    taylor = {n: sum(ck * k**n for k, ck in coef.items()) for n in (n0, n0 + 2)}
    out = np.zeros(len(probes))
    for ip, x in enumerate(np.atleast_2d(probes)):
        fx = interp(x[None])[0]
        rho0 = min(g.h / 4.0, 0.05 * support)
        rho_end = float(np.linalg.norm(x)) + support
        n_pan = max(1, math.ceil((rho_end - rho0) / (g.h / 2.0)))
        edges = np.linspace(rho0, rho_end, n_pan + 1)
        a, b = edges[:-1, None], edges[1:, None]
        rr = (0.5 * (b - a) * gx[None] + 0.5 * (a + b)).ravel()
        ww = (0.5 * (b - a) * gw[None]).ravel() * rr ** (-1.0 - 2.0 * s)
        total = 0.0
        for e, we in zip(dirs, wdir):
            delta = coef[0] * fx * np.ones_like(rr)
            for k, ck in coef.items():
                if k != 0:
                    delta += ck * interp(x[None] + k * rr[:, None] * e[None])
            bulk = np.dot(ww, delta)
            near = 0.0
            for n in (n0, n0 + 2):
                dn = interp.directional_derivative(x, e, n)
                near += taylor[n] * dn / math.factorial(n) * rho0 ** (n - 2 * s) / (n - 2 * s)
            tail = coef[0] * fx * rho_end ** (-2.0 * s) / (2.0 * s)
            total += we * (near + bulk + tail)
        out[ip] = c * total
    return out


def default_probes(f: Field, count: int = 5) -> np.ndarray:
    """Lattice points from the centre of mass of |f| out towards the edge of its bulk."""
    g = f.grid
    a = np.abs(f.values)
    bulk = g.radius[a > 1e-3 * a.max()].max()
    pts = []
    for j in range(count):
        r = bulk * j / max(count - 1, 1)
        i = int(round(r / g.h))
        pt = np.zeros(g.d)
        if g.d == 1 or j % 2 == 0:
            pt[0] = i * g.h
        else:
            q = int(round(r / (g.h * math.sqrt(2))))
            pt[:2] = q * g.h
        pts.append(pt)
    return np.array(pts)


def frac_laplacian_crosscheck(f: Field, s: float, probes=None, n_theta: int = 48) -> float:
    """Max discrepancy between spectral Lambda^{2s} f and the real-space definition.

    Normalized by the lattice sup of the spectral result.
    """
    if not (0 < s < 1 or 1 < s < 2):
        raise ValueError(f"s must lie in (0, 1) or (1, 2), got {s}")
    g = f.grid
    if g.d not in (1, 2):
        raise NotImplementedError("the real-space cross-check supports d = 1 and d = 2")
    a = np.abs(f.values)
    frame = np.zeros(g.shape, dtype=bool)
    for crd in g.coords:
        frame |= np.broadcast_to(np.abs(crd) >= 0.5 * g.L, g.shape)
    if a[frame].max() > 1e-12 * a.max():
        raise ValueError("field is not negligible outside |x| < L/2; tail contamination")
    probes = default_probes(f) if probes is None else np.atleast_2d(np.asarray(probes, dtype=float))
    if np.any(np.abs(probes) > 0.5 * g.L):
        raise ValueError("probe too close to the boundary; tail contamination")
    spec = fractional_laplacian(f, 2.0 * s)
    idx = np.rint((probes + g.L) / g.h).astype(int)
    if np.any(np.abs(idx * g.h - g.L - probes) > 1e-9 * g.h):
        raise ValueError("probes must be lattice points")
    spec_vals = spec.values[tuple(idx.T)]
    quad = fractional_laplacian_quadrature(f, s, probes, n_theta=n_theta)
    return float(np.max(np.abs(quad - spec_vals)) / np.abs(spec.values).max())


# sign and positivity inequalities

def lattice_fractional_laplacian(f: Field, a: float) -> Field:
    """Positive-weight lattice form of Lambda^a.

    (Lambda^a u)_i = sum_{j != i} w_{i-j} (u_i - u_j) with w_m = c h^d / |m h|^{d+a}
    over the periodic offsets (the singular-integral definition sampled on the
    lattice), and the 2d+1 point Laplacian at a = 2. Every off-diagonal weight is
    nonnegative, so the operator satisfies the sign properties exactly.
    """
    if not 0 < a <= 2:
        raise ValueError("a must lie in (0, 2]")
    g = f.grid
    offs = np.meshgrid(*([np.fft.fftfreq(g.n, d=1.0 / g.n)] * g.d), indexing="ij")
    dist = np.sqrt(sum(o**2 for o in offs)) * g.h
    if a == 2:
        w = np.where(np.isclose(dist, g.h), 1.0 / g.h**2, 0.0)
    else:
        c = singular_integral_constant(g.d, a / 2)
        with np.errstate(divide="ignore"):
            w = np.where(dist > 0, c * g.h**g.d / dist ** (g.d + a), 0.0)
    conv = np.fft.ifftn(np.fft.fftn(w) * np.fft.fftn(f.values)).real
    return Field(g, w.sum() * f.values - conv)


SIGN_CHECKS = ("pointwise_minus", "pointwise_plus", "integral_abs", "integral_parts", "drift_bound")


def sign_inequality_suite(u: Field, a: float, p: float, v: Field, floor: float = 1e-9,
                          operator: str = "spectral") -> dict[str, bool]:
    """Pointwise and integral sign properties of Lambda^a and of the drift term.

    ``operator`` is "spectral" (Fourier multiplier) or "lattice"
    (lattice_fractional_laplacian). Violations up to ``floor`` times the natural
    scale of each quantity are tolerated.
      pointwise_minus:  -u_- Lambda^a u >= u_- Lambda^a u_-
      pointwise_plus:    u_+ Lambda^a u >= u_+ Lambda^a u_+
      integral_abs:      int |u|^{p-2} u Lambda^a u >= 0
      integral_parts:    +int u_+^{p-1} Lambda^a u >= 0 and -int u_-^{p-1} Lambda^a u >= 0
      drift_bound:       int (u_-)^{p-1} div(u grad v) <= ((p-1)/p) |Delta v|_inf |u_-|_p^p
    """
    if not 0 < a <= 2:
        raise ValueError("a must lie in (0, 2]")
    if p < 2:
        raise ValueError("p must be >= 2")
    if u.grid != v.grid:
        raise ValueError("u and v must share a grid")
    if operator == "spectral":
        op = fractional_laplacian
    elif operator == "lattice":
        op = lattice_fractional_laplacian
    else:
        raise ValueError(f"unknown operator {operator!r}")
    x = u.values
    up, um = np.maximum(x, 0.0), np.maximum(-x, 0.0)
    lu = op(u, a).values
    lup = op(Field(u.grid, up), a).values
    lum = op(Field(u.grid, um), a).values
    scale = np.abs(x).max() * np.abs(lu).max() + 1e-300
    vol = u.grid.cell_volume
    out = {
        "pointwise_minus": bool(np.all(-um * lu - um * lum >= -floor * scale)),
        "pointwise_plus": bool(np.all(up * lu - up * lup >= -floor * scale)),
    }
    iscale = vol * np.sum(np.abs(x) ** (p - 1) * np.abs(lu)) + 1e-300
    out["integral_abs"] = bool(vol * np.sum(np.abs(x) ** (p - 2) * x * lu) >= -floor * iscale)
    plus = vol * np.sum(up ** (p - 1) * lu)
    minus = -vol * np.sum(um ** (p - 1) * lu)
    out["integral_parts"] = bool(plus >= -floor * iscale and minus >= -floor * iscale)
    gv = gradient(v)
    flux = gv * x
    div = divergence(flux).values
    lhs = vol * np.sum(um ** (p - 1) * div)
    lap_v = divergence(gv).values
    rhs = (p - 1) / p * np.abs(lap_v).max() * lp_norm(Field(u.grid, um), p) ** p
    dscale = vol * np.sum(um ** (p - 1) * np.abs(div)) + 1e-300
    out["drift_bound"] = bool(lhs <= rhs + floor * dscale)
    return out
