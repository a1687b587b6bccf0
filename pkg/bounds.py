"""
Closed-form error and sample-complexity bounds for truncated Taylor expansions.

All logarithms are natural. Counts are rounded up and saturate at
``SATURATION_SENTINEL`` instead of overflowing.
"""

import logging
import math
from dataclasses import asdict, dataclass
from typing import Any, Dict, Optional

from scipy.optimize import brentq

logger = logging.getLogger("pauli_bounds")

# --- Constants ---
SATURATION_SENTINEL = 2**63 - 1
SHADOW_EPS_GUARD = 1e-9
MAX_EXP_ARGUMENT = 709.0
MODES = ("concat", "direct", "commutator", "propagator-only")


# --- Data Structures ---
@dataclass
class BoundReport:
    """Systematic and statistical bounds for one expansion, with echoed inputs."""

    propagator_tail: float
    total_systematic: float
    gamma_l1_bound: float
    shots_hoeffding: int
    shots_shadow: int
    term_count_bound: int
    mode: str
    Lambda: float
    K: int
    r: int
    eps: float
    delta: float
    norm_o: float
    w_max: int
    m_tot: int
    gamma_l1: float

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def _check_nonnegative(**values: float) -> None:
    for name, value in values.items():
        if value < 0:
            raise ValueError(f"{name} must be non-negative, got {value}")


def _check_probability(name: str, value: float) -> None:
    if not 0 < value < 1:
        raise ValueError(f"{name} must lie in (0, 1), got {value}")


def _saturating_count(value: float) -> int:
    if value != value:
        raise ValueError("Count evaluated to NaN")
    if value >= SATURATION_SENTINEL:
        return SATURATION_SENTINEL
    return int(math.ceil(value))


def _bounded_exp(x: float) -> float:
    return math.inf if x > MAX_EXP_ARGUMENT else math.exp(x)


def _saturating_pow(base: int, exponent: int) -> int:
    result = 1
    for _ in range(exponent):
        result *= base
        if result >= SATURATION_SENTINEL:
            return SATURATION_SENTINEL
    return result


# --- Systematic error ---
def propagator_tail_bound(Lambda: float, K: int, imaginary: bool = False) -> float:
    """
    Lambda^{K+1}/(K+1)!, the Taylor remainder of e^{-iHt} with Lambda >= ||H|| t.

    For imaginary time the remainder of e^{-tau H} picks up the Lagrange factor
    e^Lambda.
    """
    _check_nonnegative(Lambda=Lambda, K=K)
    tail = 1.0
    for k in range(1, K + 2):
        tail *= Lambda / k
    if imaginary:
        tail *= _bounded_exp(Lambda)
    return tail


def conjugation_error_bound(eps_u: float, norm_o: float, norm_u: float = 1.0) -> float:
    """
    Error of U~^dagger O U~ when U~ = U + U_eps with ||U_eps|| <= eps_u.

    For unitary U this is (2 eps + eps^2) ||O||, at most 3 eps ||O|| once
    eps <= 1.
    """
    _check_nonnegative(eps_u=eps_u, norm_o=norm_o, norm_u=norm_u)
    if norm_o == 0:
        return 0.0
    return (2 * eps_u * norm_u + eps_u**2) * norm_o


def direct_expansion_tail_bound(Lambda: float, K: int, norm_o: float) -> float:
    """||O|| (2 Lambda)^{K+1}/(K+1)! for the direct Taylor expansion of O(t)."""
    _check_nonnegative(norm_o=norm_o)
    return norm_o * propagator_tail_bound(2 * Lambda, K)


def segmented_propagator_error(Lambda: float, K: int, r: int, imaginary: bool = False) -> float:
    """
    ||U~(t/r)^r - U(t)|| for r segments with per-segment argument Lambda.

    Real-time segments are unitary and their tails add. Imaginary-time segments
    have norm up to e^Lambda, so errors compound:
    (e^Lambda + tail)^r - e^{r Lambda} <= r tail (e^Lambda + tail)^{r-1}.
    """
    if r < 1:
        raise ValueError(f"r must be at least 1, got {r}")
    tail = propagator_tail_bound(Lambda, K, imaginary)
    if not imaginary or r == 1:
        return r * tail
    # log(e^Lambda + tail) without forming e^Lambda
    log_segment = Lambda + math.log1p(propagator_tail_bound(Lambda, K))
    return r * tail * _bounded_exp((r - 1) * log_segment)


def segmented_systematic_bound(
    Lambda: float, K: int, r: int, norm_o: float, conjugated: bool, imaginary: bool = False
) -> float:
    """Segmented propagator error, pushed through U~^dagger O U~ when ``conjugated``."""
    error = segmented_propagator_error(Lambda, K, r, imaginary)
    if not conjugated:
        return error
    norm_u = _bounded_exp(r * Lambda) if imaginary else 1.0
    return conjugation_error_bound(error, norm_o, norm_u)


# --- Term counts and coefficient norms ---
def term_count_bound(
    L: int, K: int, r: int, conjugated: bool, observable_terms: int = 1
) -> int:
    """
    Per-side count m = sum_{k<=K} L^k raised to the r-th power, squared when the
    propagator appears on both sides of the observable.
    """
    if L < 1:
        raise ValueError(f"L must be at least 1, got {L}")
    if K < 0 or r < 1 or observable_terms < 1:
        raise ValueError(f"Need K >= 0, r >= 1, observable_terms >= 1; got {K}, {r}, {observable_terms}")
    per_side = K + 1 if L == 1 else (L ** (K + 1) - 1) // (L - 1)
    count = _saturating_pow(min(per_side, SATURATION_SENTINEL), r)
    if conjugated:
        count = _saturating_pow(count, 2)
    return min(count * observable_terms, SATURATION_SENTINEL)


def gamma_l1_bound(
    lam: float,
    t: float,
    K: Optional[int],
    r: int,
    observable_l1: float = 1.0,
    conjugated: bool = True,
) -> float:
    """
    (sum_{k<=K} (lam t/r)^k/k!)^{2r}, the refinement of the e^{2 lam t} bound.

    ``K=None`` gives the untruncated limit. ``conjugated=False`` counts one
    propagator per segment instead of two.
    """
    _check_nonnegative(lam=lam, t=t, observable_l1=observable_l1)
    if r < 1:
        raise ValueError(f"r must be at least 1, got {r}")
    x = lam * t / r
    if K is None:
        per_factor = math.exp(x)
    else:
        per_factor = 0.0
        term = 1.0
        for k in range(K + 1):
            if k:
                term *= x / k
            per_factor += term
    factors = 2 * r if conjugated else r
    return per_factor**factors * observable_l1


# --- Sampling ---
def hoeffding_shots(gamma_l1: float, eps: float, delta: float) -> int:
    """N >= 2 ||gamma||_1^2 ln(2/delta) / eps^2."""
    _check_nonnegative(gamma_l1=gamma_l1)
    if eps <= 0:
        raise ValueError(f"eps must be positive, got {eps}")
    _check_probability("delta", delta)
    if gamma_l1 == 0:
        return 0
    return _saturating_count(2 * gamma_l1**2 * math.log(2 / delta) / eps**2)


def hoeffding_radius(value_range: float, n_samples: int, delta: float) -> float:
    """Radius of a Hoeffding interval for a mean of samples in [-value_range, value_range]."""
    _check_probability("delta", delta)
    if n_samples < 1:
        raise ValueError(f"Need at least one sample, got {n_samples}")
    return value_range * math.sqrt(2 * math.log(2 / delta) / n_samples)


def shadow_shots(w_max: int, m_tot: int, eps: float, delta: float) -> int:
    """N = 2/(eps^2 (1 - eps)) 3^{w_max} ln(3 m_tot / delta) local-shadow snapshots."""
    _check_probability("eps", eps)
    _check_probability("delta", delta)
    if 1 - eps < SHADOW_EPS_GUARD:
        raise ValueError(f"eps={eps} is too close to 1; the shadow bound diverges")
    if m_tot < 1:
        raise ValueError(f"m_tot must be at least 1, got {m_tot}")
    _check_nonnegative(w_max=w_max)
    return _saturating_count(
        2 / (eps**2 * (1 - eps)) * 3.0**w_max * math.log(3 * m_tot / delta)
    )


def shadow_radius(w_max: int, m_tot: int, n_snapshots: int, delta: float) -> Optional[float]:
    """
    Per-term precision that ``shadow_shots`` certifies for ``n_snapshots``.

    The shot count is decreasing in eps on (0, 2/3]; below its minimum there
    returns None.
    """
    _check_probability("delta", delta)
    if n_snapshots < 1 or m_tot < 1:
        raise ValueError("Need at least one snapshot and one term")
    scale = 3.0**w_max * math.log(3 * m_tot / delta)

    def excess(eps: float) -> float:
        return 2 * scale / (eps**2 * (1 - eps)) - n_snapshots

    if excess(2 / 3) > 0:
        return None
    lower = 0.5 * math.sqrt(2 * scale / n_snapshots)
    return brentq(excess, lower, 2 / 3)


# --- Report assembly ---
def compute_bound_report(
    mode: str,
    lam: float,
    t: float,
    K: int,
    r: int,
    eps: float,
    delta: float,
    norm_o: float,
    L: int,
    m_tot: int,
    gamma_l1: float,
    w_max: int,
    norm_h: Optional[float] = None,
    observable_terms: int = 1,
    observable_l1: float = 1.0,
    imaginary: bool = False,
) -> BoundReport:
    """
    Bounds for one expansion. ``norm_h`` is a certified bound on ||H|| and
    defaults to lambda. Segment errors are composed by
    ``segmented_propagator_error`` before the conjugation bound is applied once.
    """
    if mode not in MODES:
        raise ValueError(f"Unknown expansion mode {mode!r}; expected one of {MODES}")
    norm_h = lam if norm_h is None else norm_h
    Lambda = norm_h * t / r
    tail = propagator_tail_bound(Lambda, K, imaginary)

    if mode in ("concat", "propagator-only"):
        total = segmented_systematic_bound(Lambda, K, r, norm_o, mode == "concat", imaginary)
    else:
        total = direct_expansion_tail_bound(norm_h * t, K, norm_o)
        if imaginary:
            total *= _bounded_exp(2 * norm_h * t)

    conjugated = mode != "propagator-only"
    count_bound = term_count_bound(
        max(L, 1), K, r, conjugated, observable_terms if conjugated else 1
    )
    gamma_bound = gamma_l1_bound(
        lam, t, K, r, observable_l1 if conjugated else 1.0, conjugated=conjugated
    )

    shots_hoeffding = hoeffding_shots(gamma_l1, eps, delta)
    if gamma_l1 <= eps:
        shots_shadow = 0
    else:
        shots_shadow = shadow_shots(w_max, max(m_tot, 1), eps / gamma_l1, delta)

    report = BoundReport(
        propagator_tail=tail,
        total_systematic=total,
        gamma_l1_bound=gamma_bound,
        shots_hoeffding=shots_hoeffding,
        shots_shadow=shots_shadow,
        term_count_bound=count_bound,
        mode=mode,
        Lambda=Lambda,
        K=K,
        r=r,
        eps=eps,
        delta=delta,
        norm_o=norm_o,
        w_max=w_max,
        m_tot=m_tot,
        gamma_l1=gamma_l1,
    )
    logger.debug(f"Bound report: {report}")
    return report
