"""Exponent calculus for the mild-solution theory.

Every admissibility condition on the Lebesgue exponents (p, r, wp) is written
out as a named inequality so that a rejection can say exactly which bound
failed. Arithmetic is generic: pass ``fractions.Fraction`` values to evaluate
boundary points exactly. Float inputs that agree with a boundary to 1e-12
relative are treated as lying on it, so that e.g. wp = 2.5 counts as
d/(alpha - 1) for alpha = 1.8 even though 2/0.8 is not exact in binary.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .spectral import SystemParams

INF = math.inf
TIE_RTOL = 1e-12
CONSEQUENCE_SLACK = 1e-12


class FeasibilityInconsistency(AssertionError):
    """A consequence that must follow from accepted exponents failed to hold."""


def _inv(x):
    return 0 if x == INF else 1 / x


def _cmp(a, b) -> int:
    if a == b:
        return 0
    if a == INF or b == INF:
        return -1 if a < b else 1
    if not (isinstance(a, (int, Fraction)) and isinstance(b, (int, Fraction))):
        if abs(a - b) <= TIE_RTOL * max(abs(a), abs(b)):
            return 0
    return -1 if a < b else 1


def _lt(a, b) -> bool:
    return _cmp(a, b) < 0


def _le(a, b) -> bool:
    return _cmp(a, b) <= 0


def _eq(a, b) -> bool:
    return _cmp(a, b) == 0


def _conj(p):
    return p / (p - 1)


@dataclass(frozen=True)
class HypothesisVerdict:
    """Outcome of the hypothesis checks for one (p, r) pair.

    ``case`` is "A2a" or "A2b" according to whether p <= d/(beta - 1).
    ``violations`` lists every failed inequality by name, in evaluation order.
    """

    accepted: bool
    case: str | None
    violations: tuple[str, ...]
    h3_applies: bool
    local_ok: bool

    @property
    def first_violation(self) -> str | None:
        return self.violations[0] if self.violations else None


@dataclass(frozen=True)
class ExtraRegionVerdict:
    accepted: bool
    branch: int | None
    violations: tuple[str, ...]


@dataclass(frozen=True)
class WpVerdict:
    case: str  # "a", "b1", "b2" or "rejected"
    condition_sum: float


@dataclass(frozen=True)
class ExponentProfile:
    """Resolved exponent bundle with its derived rates and case tag."""

    p: float
    r: float
    wp: float
    sigma: float
    p1: float
    p2: float
    case: str
    accepted: bool = True
    violations: tuple[str, ...] = field(default=())

    def as_dict(self) -> dict:
        return {
            "p": float(self.p), "r": float(self.r), "wp": float(self.wp),
            "sigma": float(self.sigma), "p1": float(self.p1), "p2": float(self.p2),
            "case": self.case, "accepted": self.accepted, "violations": list(self.violations),
        }


def h3_applies(params: SystemParams) -> bool:
    return 2 * params.beta * (params.alpha - 1) >= params.alpha


def _r_lower_ok(d, alpha, p, r) -> bool:
    """max{p, p', d/(alpha-1)} < r, with r = max{p, p'} allowed when it exceeds d/(alpha-1)."""
    m = max(p, _conj(p))
    crit = d / (alpha - 1)
    if _lt(max(m, crit), r):
        return True
    return _eq(r, m) and _lt(crit, m)


def check_hypotheses(params: SystemParams, p, r) -> HypothesisVerdict:
    """Evaluate the dimension, (p, r)-range and global-p hypotheses.

    The (p, r)-range splits into case (a), p <= d/(beta-1), with a finite
    upper bound on r, and case (b), p > d/(beta-1), with r unbounded above.
    The extra cap on p applies whenever 2 beta (alpha - 1) >= alpha.
    """
    d, a, b = params.d, params.alpha, params.beta
    v: list[str] = []
    if d < 2:
        v.append("H1: d >= 2")
    if not (1 < a <= 2):
        v.append("H1: 1 < alpha <= 2")
    if not (1 < b <= d):
        v.append("H1: 1 < beta <= d")
    if not p > 1:
        v.append("p > 1")
        return HypothesisVerdict(False, None, tuple(v), h3_applies(params), False)
    if not r > 1:
        v.append("r > 1")
        return HypothesisVerdict(False, None, tuple(v), h3_applies(params), False)
    if not _le(p, r):
        v.append("p <= r")

    p_crit = d / (b - 1)
    if _le(p, p_crit):
        case = "A2a"
        if not _lt(2 * d / (d + b - 1), p):
            v.append("H2a: p > 2d/(d+beta-1)")
        if not _lt(d / (a + b - 2), p):
            v.append("H2a: p > d/(alpha+beta-2)")
        if not _r_lower_ok(d, a, p, r):
            v.append("H2a: r > max{p, p/(p-1), d/(alpha-1)}")
        denom = d - p * (b - 1)
        r_cap = INF if _eq(denom, 0) or denom <= 0 else p * d / denom
        if not _lt(r, r_cap):
            v.append("H2a: r < pd/(d-p(beta-1))")
    else:
        case = "A2b"
        if not _r_lower_ok(d, a, p, r):
            v.append("H2b: r > max{p, p/(p-1), d/(alpha-1)}")
    local_ok = not v

    applies = h3_applies(params)
    if applies:
        denom = 2 * b * (a - 1) - a
        p_cap = INF if _eq(denom, 0) or denom <= 0 else d * a / denom
        if not _lt(p, p_cap):
            v.append("H3: p < d alpha/(2 beta(alpha-1) - alpha)")
    return HypothesisVerdict(not v, case, tuple(v), applies, local_ok)


def compute_sigma(params: SystemParams, p, r):
    d, a, b = params.d, params.alpha, params.beta
    ir = _inv(r)
    return 2 - (d * ir + 1) / a - (d / b) * (1 / p - ir) - 1 / b


def _p2(params: SystemParams, r):
    d, a, b = params.d, params.alpha, params.beta
    if r == INF:
        return d * a / (b * (a - 1))
    return d * r * a / (b * (r * (a - 1) - d) + d * a)


def compute_p1_p2(params: SystemParams, p, r) -> tuple:
    """Initial-data exponents of the global theory, with their bounds asserted."""
    d, a, b = params.d, params.alpha, params.beta
    s = compute_sigma(params, p, r)
    p1 = p * d / (a * s * p + d)
    p2 = _p2(params, r)
    eps = CONSEQUENCE_SLACK
    if not (1 - eps <= p1 < p):
        raise FeasibilityInconsistency(f"expected 1 <= p1 < p, got p1={p1}, p={p}")
    if not (1 < p2 < r):
        raise FeasibilityInconsistency(f"expected 1 < p2 < r, got p2={p2}, r={r}")
    ir = _inv(r)
    ident = (d * ir + 1) / a + (d / b) * (1 / p2 - ir)
    if abs(ident - 1) > 10 * eps:
        raise FeasibilityInconsistency(f"p2 identity off by {ident - 1}")
    return p1, p2


def wp_condition_sum(params: SystemParams, wp, r):
    d, a, b = params.d, params.alpha, params.beta
    ir = _inv(r)
    return (d * ir + 1) / a + (d / b) * (_inv(wp) - ir)


def check_wp(params: SystemParams, wp, r) -> WpVerdict:
    """Classify the exponent of the initial gradient against r."""
    d, a, b = params.d, params.alpha, params.beta
    total = float(wp_condition_sum(params, wp, r))
    if _eq(wp, r):
        return WpVerdict("a", total)
    if _lt(b, a):
        return WpVerdict("rejected", total)
    crit = d / (a - 1)
    if _eq(a, b) and _eq(wp, crit):
        return WpVerdict("b1", total)
    if _le(crit, wp) and _lt(wp, r):
        return WpVerdict("b2", total)
    return WpVerdict("rejected", total)


def theta_exponents(params: SystemParams, p, r, wp) -> tuple:
    """(theta1, theta2 for gamma > 0, theta2 for gamma = 0)."""
    d, a = params.d, params.alpha
    ir = _inv(r)
    lead = 1 - (d * ir + 1) / a
    theta1 = 1 - wp_condition_sum(params, wp, r)
    return theta1, lead, compute_sigma(params, p, r)


def check_extra_region(params: SystemParams, p, r) -> ExtraRegionVerdict:
    """Ranges of (p, r) on which r sigma <= d/alpha, i.e. rho stays in L^p1."""
    d, a, b = params.d, params.alpha, params.beta
    split = 2 * d / ((a - 1) + 2 * (b - 1))
    v: list[str] = []
    if not (p > 1 and r > 1):
        return ExtraRegionVerdict(False, None, ("p > 1 and r > 1",))
    if _le(p, split):
        branch = 1
        if not _lt(max(2 * d / (d + b - 1), d / (a + b - 2)), p):
            v.append("extra-1: p > max{2d/(d+beta-1), d/(alpha+beta-2)}")
        if not _r_lower_ok(d, a, p, r):
            v.append("extra-1: r > max{p, p/(p-1), d/(alpha-1)}")
        denom = d - p * (b - 1)
        r_cap = INF if denom <= 0 else p * d / denom
        if not _lt(r, r_cap):
            v.append("extra-1: r < pd/(d-p(beta-1))")
    else:
        branch = 2
        p_cap = a * d / max(2 * b * (a - 1) - a, a * (a - 2) + b)
        if not _lt(p, p_cap):
            v.append("extra-2: p < alpha d/max{2 beta(alpha-1)-alpha, alpha(alpha-2)+beta}")
        if not _r_lower_ok(d, a, p, r):
            v.append("extra-2: r > max{p, p/(p-1), d/(alpha-1)}")
        denom = (b * (a - 1) + a * (b - 1)) * p - a * d
        r_cap = INF if denom <= 0 else (2 * b - a) * p * d / denom
        if not _le(r, r_cap):
            v.append("extra-2: r <= (2beta-alpha)pd/([beta(alpha-1)+alpha(beta-1)]p - alpha d)")
    if v:
        return ExtraRegionVerdict(False, branch, tuple(v))
    rs = r * compute_sigma(params, p, r) if r != INF else INF
    if not rs <= d / a + 10 * CONSEQUENCE_SLACK * max(1.0, d / a):
        raise FeasibilityInconsistency(f"extra region accepted but r sigma = {rs} > d/alpha = {d / a}")
    return ExtraRegionVerdict(True, branch, ())


def derived_conditions(params: SystemParams, p, r) -> dict[str, bool]:
    """The inequalities that accepted (p, r) must imply, with a 1e-12 slack."""
    d, a, b = params.d, params.alpha, params.beta
    eps = CONSEQUENCE_SLACK
    ir = _inv(r)
    s = compute_sigma(params, p, r)
    lead = (d * ir + 1) / a
    mid = (d / b) * (1 / p - ir) + 1 / b
    out = {
        "a: (1/alpha)(d/r+1) < 1": lead < 1 + eps,
        "b: (d/beta)(1/p-1/r) + 1/beta < 1": mid < 1 + eps,
        "c: 1/p + 1/r <= 1": 1 / p + ir <= 1 + eps,
        "d: sigma + mid/2 < 1": s + 0.5 * mid < 1 + eps,
        "e: lead - 1 < sigma < lead": lead - 1 - eps < s < lead + eps,
        "sigma in (0, 1)": -eps < s < 1 + eps,
    }
    if 1 < a < 2 and 1 < b < 2:
        out["sigma < (max{alpha,beta}-2)/min{alpha,beta} + 1"] = s < (max(a, b) - 2) / min(a, b) + 1 + eps
    try:
        p1, p2 = compute_p1_p2(params, p, r)
        out["1 <= p1 < p"] = True
        out["1 < p2 < r"] = True
        out["sigma + (d/beta)(1/p2-1/r) < 1"] = s + (d / b) * (1 / p2 - ir) < 1 + eps
    except FeasibilityInconsistency:
        out["1 <= p1 < p"] = False
        out["1 < p2 < r"] = False
    return out


def build_profile(params: SystemParams, p, r, wp=None) -> ExponentProfile:
    """Resolve sigma, p1, p2 and the case tag for a requested (p, r, wp)."""
    wp = r if wp is None else wp
    verdict = check_hypotheses(params, p, r)
    sigma = compute_sigma(params, p, r)
    if verdict.accepted:
        p1, p2 = compute_p1_p2(params, p, r)
        wpv = check_wp(params, wp, r)
        if wpv.case == "rejected":
            return ExponentProfile(p, r, wp, sigma, p1, p2, "outside-theory", False,
                                   ("wp outside its admissible range",))
        if wpv.case in ("b1", "b2"):
            case = "local_" + wpv.case
        elif check_extra_region(params, p, r).accepted:
            case = "extra"
        else:
            case = "global"
        return ExponentProfile(p, r, wp, sigma, p1, p2, case, True, ())
    d, a = params.d, params.alpha
    p1 = p * d / (a * sigma * p + d)
    p2 = _p2(params, r)
    return ExponentProfile(p, r, wp, sigma, p1, p2, "outside-theory", False, verdict.violations)


@dataclass(frozen=True)
class RegionSample:
    p: float
    r: float
    accepted: bool
    case: str | None
    local_ok: bool
    h3_ok: bool
    extra: bool
    first_violation: str | None
    sigma: float
    theta1: float
    theta2_gamma_pos: float
    theta2_gamma_zero: float
    p1: float
    p2: float

    @staticmethod
    def header() -> list[str]:
        return ["p", "r", "accepted", "case", "local_ok", "h3_ok", "extra", "first_violation",
                "sigma", "theta1", "theta2_gamma_pos", "theta2_gamma_zero", "p1", "p2"]

    def row(self) -> list:
        return [getattr(self, k) for k in self.header()]


def classify(params: SystemParams, p: float, r: float) -> RegionSample:
    v = check_hypotheses(params, p, r)
    sigma = float(compute_sigma(params, p, r))
    t1, t2p, t2z = (float(x) for x in theta_exponents(params, p, r, r))
    d, a = params.d, params.alpha
    denom = a * sigma * p + d
    p1 = float(p * d / denom) if denom != 0 else math.nan
    p2 = float(_p2(params, r))
    extra = v.accepted and check_extra_region(params, p, r).accepted
    h3_ok = not any(x.startswith("H3") for x in v.violations)
    return RegionSample(float(p), float(r), v.accepted, v.case, v.local_ok, h3_ok, extra,
                        v.first_violation, sigma, t1, t2p, t2z, p1, p2)


def default_ranges(params: SystemParams) -> tuple[tuple[float, float], tuple[float, float]]:
    """A (p, r) window wide enough to contain the admissible region."""
    d, a, b = params.d, params.alpha, params.beta
    p_hi = 2.0 * d / (b - 1)
    if h3_applies(params):
        denom = 2 * b * (a - 1) - a
        if denom > 0:
            p_hi = min(p_hi, 1.05 * d * a / denom)
    p_lo = 1.0 + 1e-3
    r_lo = 1.0 + 1e-3
    r_hi = 4.0 * max(d / (a - 1), p_hi, 2.0)
    return (p_lo, p_hi), (r_lo, r_hi)


def scan_region(params: SystemParams, p_range=None, r_range=None, resolution: int = 64) -> list[RegionSample]:
    """Classify a resolution x resolution lattice of (p, r) pairs."""
    if resolution < 1:
        raise ValueError("resolution must be >= 1")
    if p_range is None or r_range is None:
        dp, dr = default_ranges(params)
        p_range = p_range or dp
        r_range = r_range or dr
    if min(p_range) <= 0 or min(r_range) <= 0:
        raise ValueError("ranges must be positive")
    ps = np.linspace(p_range[0], p_range[1], resolution)
    rs = np.linspace(r_range[0], r_range[1], resolution)
    return [classify(params, float(p), float(r)) for p in ps for r in rs]


def best_profile(params: SystemParams, resolution: int = 64) -> ExponentProfile:
    """The scanned accepted sample maximizing min(sigma, 1 - sigma)."""
    samples = [s for s in scan_region(params, resolution=resolution) if s.accepted]
    if not samples:
        raise ValueError(f"no admissible (p, r) found for {params}")
    best = max(samples, key=lambda s: (min(s.sigma, 1.0 - s.sigma), -s.p, -s.r))
    return build_profile(params, best.p, best.r)


def sample_accepted(params: SystemParams, count: int, rng: np.random.Generator,
                    max_tries: int = 200_000) -> list[tuple[float, float]]:
    """Rejection-sample accepted (p, r): p uniform on the default window, r log-uniform."""
    (p_lo, p_hi), (r_lo, r_hi) = default_ranges(params)
    out: list[tuple[float, float]] = []
    tries = 0
    while len(out) < count and tries < max_tries:
        batch = max(64, 4 * (count - len(out)))
        ps = rng.uniform(p_lo, p_hi, batch)
        rs = np.exp(rng.uniform(math.log(r_lo), math.log(r_hi), batch))
        tries += batch
        for p, r in zip(ps, rs):
            if r >= p and check_hypotheses(params, float(p), float(r)).accepted:
                out.append((float(p), float(r)))
                if len(out) == count:
                    break
    return out


def soundness_violations(params: SystemParams, p: float, r: float, rng: np.random.Generator | None = None) -> list[str]:
    """Names of the derived inequalities that fail at an accepted (p, r).

    Covers condition groups a-e, the p1/p2 bounds, theta2 >= theta1 >= 0 for
    wp = r and (when admissible) a random wp in [d/(alpha-1), r), and
    r sigma <= d/alpha on the extra region.
    """
    bad = [k for k, ok in derived_conditions(params, p, r).items() if not ok]
    eps = CONSEQUENCE_SLACK
    wps = [r]
    d, a, b = params.d, params.alpha, params.beta
    crit = d / (a - 1)
    if rng is not None and b >= a and crit < r and not math.isinf(r):
        wps.append(float(rng.uniform(crit, r)))
    for wp in wps:
        if check_wp(params, wp, r).case == "rejected":
            continue
        t1, t2p, t2z = (float(x) for x in theta_exponents(params, p, r, wp))
        if not (t1 >= -eps and t2p >= t1 - eps and t2z >= t1 - eps):
            bad.append(f"theta2 >= theta1 >= 0 at wp={wp}")
    try:
        extra = check_extra_region(params, p, r)
    except FeasibilityInconsistency:
        bad.append("f: r sigma <= d/alpha")
    else:
        if extra.accepted and not r * float(compute_sigma(params, p, r)) <= d / a + 10 * eps * max(1.0, d / a):
            bad.append("f: r sigma <= d/alpha")
    return bad
