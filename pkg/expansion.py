"""
Truncated-series Pauli-sum approximations of propagators and of
Heisenberg-evolved observables.

Three flavours are provided for O(t) = e^{iHt} O e^{-iHt}:

- concatenation of two truncated propagators, U~(t)^dagger O U~(t), with the
  evolution optionally sliced into r segments;
- the direct Taylor expansion sum_{k+k'<=K} i^{k-k'} t^{k+k'}/(k! k'!) H^k O H^{k'};
- the nested-commutator series sum_k (it)^k/k! ad_H^k(O).

Products are merged after every multiplication level so that repeated strings
(Paulis square to the identity) collapse instead of being enumerated.
"""

import logging
import math
from dataclasses import dataclass
from typing import Any, Dict, List, NamedTuple, Optional, Sequence, Tuple, Union

from scipy.special import lambertw

from bounds import propagator_tail_bound, term_count_bound
from model_io import HamiltonianSpec, ObservableSpec
from pauli_algebra import (
    DEFAULT_TOLERANCE,
    DimensionMismatchError,
    PauliSum,
    identity_coefficient,
    sum_commutator,
    sum_multiply,
)

logger = logging.getLogger("pauli_expansion")

# --- Constants ---
DEFAULT_MAX_TERMS = 10**7
DEFAULT_MAX_ORDER = 64
TIME_KINDS = ("real", "imaginary")


class TermCountExceededError(RuntimeError):
    """An intermediate expansion grew past the configured distinct-term cap."""

    def __init__(self, count: int, cap: int, predicted_bound: int):
        self.count = count
        self.cap = cap
        self.predicted_bound = predicted_bound
        super().__init__(
            f"Expansion reached {count} distinct Pauli strings, above the cap of {cap} "
            f"(a priori bound for this expansion: {predicted_bound})"
        )


class TruncationOrderError(RuntimeError):
    """No truncation order up to the cap meets the requested accuracy."""


# --- Data Structures ---
@dataclass(frozen=True)
class TimeParameter:
    """Evolution time; the generator is -i t H for real time and -tau H for imaginary time."""

    value: float
    kind: str = "real"

    def __post_init__(self) -> None:
        if self.kind not in TIME_KINDS:
            raise ValueError(f"Time kind must be one of {TIME_KINDS}, got {self.kind!r}")
        if self.value < 0:
            raise ValueError(f"Time must be non-negative, got {self.value}")

    @classmethod
    def real(cls, t: float) -> "TimeParameter":
        return cls(float(t), "real")

    @classmethod
    def imaginary(cls, tau: float) -> "TimeParameter":
        return cls(float(tau), "imaginary")

    @property
    def is_imaginary(self) -> bool:
        return self.kind == "imaginary"

    @property
    def generator_coefficient(self) -> complex:
        return -self.value + 0j if self.is_imaginary else -1j * self.value

    def divided(self, r: int) -> "TimeParameter":
        return TimeParameter(self.value / r, self.kind)


@dataclass(frozen=True)
class ExpansionStats:
    m_tot: int
    gamma_l1: float
    w_max: int
    identity_coeff: complex

    def to_dict(self) -> Dict[str, Any]:
        return {
            "m_tot": self.m_tot,
            "gamma_l1": self.gamma_l1,
            "w_max": self.w_max,
            "identity_coeff": {"real": self.identity_coeff.real, "imag": self.identity_coeff.imag},
        }


@dataclass(frozen=True)
class ExpansionResult:
    sum: PauliSum
    K: int
    r: int
    mode: str
    stats: ExpansionStats


class SequenceStage(NamedTuple):
    hamiltonian: HamiltonianSpec
    time: TimeParameter
    order: int
    segments: int = 1


ObservableLike = Union[ObservableSpec, PauliSum]


def _observable_sum(obs: ObservableLike) -> PauliSum:
    return obs.observable if isinstance(obs, ObservableSpec) else obs


def _check_same_qubits(h: HamiltonianSpec, obs: PauliSum) -> None:
    if h.n_qubits != obs.n_qubits:
        raise DimensionMismatchError(
            f"Hamiltonian acts on {h.n_qubits} qubits but the observable on {obs.n_qubits}"
        )


def _guard(
    s: PauliSum, max_terms: int, L: int, K: int, r: int = 1, conjugated: bool = False
) -> None:
    if len(s) > max_terms:
        raise TermCountExceededError(len(s), max_terms, term_count_bound(max(L, 1), K, r, conjugated))


# --- Truncation order ---
def select_truncation_order(
    Lambda: float, eps: float, max_order: int = DEFAULT_MAX_ORDER
) -> int:
    """Smallest K with Lambda^{K+1}/(K+1)! <= eps."""
    if Lambda < 0:
        raise ValueError(f"Lambda must be non-negative, got {Lambda}")
    if eps <= 0:
        raise ValueError(f"eps must be positive, got {eps}")
    for K in range(max_order + 1):
        if propagator_tail_bound(Lambda, K) <= eps:
            return K
    raise TruncationOrderError(
        f"No truncation order up to {max_order} reaches eps={eps:g} at Lambda={Lambda:g}; "
        "slice the evolution into more segments"
    )


def lambert_w_order_estimate(Lambda: float, eps: float) -> float:
    """
    Real-valued K solving (e Lambda/(K+1))^{K+1}/e = eps.

    This looser form dominates the factorial remainder, so
    ``select_truncation_order`` never exceeds ceil of the returned value.
    Asymptotically K = O(log(1/eps)/log log(1/eps)).
    """
    if Lambda <= 0:
        raise ValueError(f"Lambda must be positive, got {Lambda}")
    if not 0 < eps < 1 / math.e:
        raise ValueError(f"eps must lie in (0, 1/e), got {eps}")
    log_term = math.log(1 / (math.e * eps))
    return log_term / lambertw(log_term / (math.e * Lambda)).real - 1


# --- Propagators ---
def propagator_order_terms(
    h: HamiltonianSpec,
    time: TimeParameter,
    K: int,
    max_terms: int = DEFAULT_MAX_TERMS,
    tol: float = DEFAULT_TOLERANCE,
) -> List[PauliSum]:
    """[g^k/k! for k in 0..K] with g the generator of ``time``."""
    if K < 0:
        raise ValueError(f"Truncation order must be non-negative, got {K}")
    generator = h.to_pauli_sum().scale(time.generator_coefficient)
    power = PauliSum.identity(h.n_qubits)
    orders = [power]
    for k in range(1, K + 1):
        power = sum_multiply(power, generator, tol).scale(1 / k)
        _guard(power, max_terms, h.L, k)
        logger.debug(f"Propagator order {k}: {len(power)} distinct strings")
        orders.append(power)
    return orders


def expand_propagator(
    h: HamiltonianSpec,
    time: TimeParameter,
    K: int,
    max_terms: int = DEFAULT_MAX_TERMS,
    tol: float = DEFAULT_TOLERANCE,
) -> PauliSum:
    """sum_{k<=K} g^k/k! as a canonical Pauli sum."""
    total = PauliSum.empty(h.n_qubits)
    for term in propagator_order_terms(h, time, K, max_terms, tol):
        total = total + term
        _guard(total, max_terms, h.L, K)
    return total


def conjugate_expansion(
    u: PauliSum, obs: ObservableLike, tol: float = DEFAULT_TOLERANCE
) -> PauliSum:
    """u^dagger O u, canonicalized with the Hermitian hint set."""
    observable = _observable_sum(obs)
    if u.n_qubits != observable.n_qubits:
        raise DimensionMismatchError(
            f"Propagator acts on {u.n_qubits} qubits but the observable on {observable.n_qubits}"
        )
    product = sum_multiply(sum_multiply(u.adjoint(), observable, tol), u, tol)
    return product.with_hint(True, tol)


def expansion_stats(s: PauliSum) -> ExpansionStats:
    return ExpansionStats(
        m_tot=len(s),
        gamma_l1=s.coefficient_l1(),
        w_max=s.max_weight(),
        identity_coeff=identity_coefficient(s),
    )


def _result(s: PauliSum, K: int, r: int, mode: str) -> ExpansionResult:
    stats = expansion_stats(s)
    logger.info(
        f"{mode} expansion (K={K}, r={r}): m_tot={stats.m_tot}, "
        f"gamma_l1={stats.gamma_l1:.6g}, w_max={stats.w_max}"
    )
    return ExpansionResult(sum=s, K=K, r=r, mode=mode, stats=stats)


# --- Heisenberg picture ---
def heisenberg_taylor_concat(
    h: HamiltonianSpec,
    obs: ObservableLike,
    t: TimeParameter,
    K: int,
    r: int = 1,
    mode: str = "concat",
    truncate_total_order: Optional[int] = None,
    max_terms: int = DEFAULT_MAX_TERMS,
    tol: float = DEFAULT_TOLERANCE,
) -> ExpansionResult:
    """
    U~(t) = U~(t/r)^r from per-segment order-K propagators, then U~^dagger O U~.

    ``mode="propagator-only"`` returns U~(t) itself. ``truncate_total_order``
    (r = 1 only) keeps just the products whose combined order in t stays within
    the given limit.
    """
    observable = _observable_sum(obs)
    _check_same_qubits(h, observable)
    if r < 1:
        raise ValueError(f"Segment count must be at least 1, got {r}")
    if mode not in ("concat", "propagator-only"):
        raise ValueError(f"Unsupported concatenation mode {mode!r}")

    if truncate_total_order is not None:
        if r != 1 or mode != "concat":
            raise ValueError("Total-order truncation needs r = 1 and mode 'concat'")
        orders = propagator_order_terms(h, t, K, max_terms, tol)
        raw = PauliSum.empty(h.n_qubits)
        for k_left, left in enumerate(orders):
            left_product = sum_multiply(left.adjoint(), observable, tol)
            for k_right, right in enumerate(orders):
                if k_left + k_right > truncate_total_order:
                    break
                raw = raw + sum_multiply(left_product, right, tol)
                _guard(raw, max_terms, h.L, K, 1, True)
        return _result(raw.with_hint(True, tol), K, r, mode)

    segment = expand_propagator(h, t.divided(r), K, max_terms, tol)
    total = segment
    for _ in range(r - 1):
        total = sum_multiply(total, segment, tol)
        _guard(total, max_terms, h.L, K, r)
    if mode == "propagator-only":
        return _result(total, K, r, mode)
    conjugated = conjugate_expansion(total, observable, tol)
    _guard(conjugated, max_terms, h.L, K, r, True)
    return _result(conjugated, K, r, mode)


def heisenberg_commutator_series(
    h: HamiltonianSpec,
    obs: ObservableLike,
    t: TimeParameter,
    K: int,
    max_terms: int = DEFAULT_MAX_TERMS,
    tol: float = DEFAULT_TOLERANCE,
) -> ExpansionResult:
    """
    sum_{k<=K} s^k/k! ad_H^k(O) with s = it (real time) or s = tau.

    In imaginary time this is the similarity transform e^{tau H} O e^{-tau H},
    which is not Hermitian, so the Hermitian hint is only set for real time.
    """
    observable = _observable_sum(obs)
    _check_same_qubits(h, observable)
    if K < 0:
        raise ValueError(f"Truncation order must be non-negative, got {K}")
    step = -t.generator_coefficient
    hamiltonian = h.to_pauli_sum()
    nested = observable
    total = observable
    coeff = 1 + 0j
    for k in range(1, K + 1):
        nested = sum_commutator(hamiltonian, nested, tol)
        if not nested:
            logger.debug(f"Nested commutators vanish from order {k}")
            break
        coeff *= step / k
        total = total + nested.scale(coeff)
        _guard(total, max_terms, h.L, k, 1, True)
    if not t.is_imaginary:
        total = total.with_hint(True, tol)
    return _result(total, K, 1, "commutator")


def heisenberg_direct_expansion(
    h: HamiltonianSpec,
    obs: ObservableLike,
    t: TimeParameter,
    K: int,
    max_terms: int = DEFAULT_MAX_TERMS,
    tol: float = DEFAULT_TOLERANCE,
) -> ExpansionResult:
    """sum_{k+k'<=K} conj(c)^k c^{k'}/(k! k'!) H^k O H^{k'} with c the generator coefficient."""
    observable = _observable_sum(obs)
    _check_same_qubits(h, observable)
    if K < 0:
        raise ValueError(f"Truncation order must be non-negative, got {K}")
    c = t.generator_coefficient
    hamiltonian = h.to_pauli_sum()
    powers = [PauliSum.identity(h.n_qubits)]
    for k in range(1, K + 1):
        powers.append(sum_multiply(powers[-1], hamiltonian, tol))
        _guard(powers[-1], max_terms, h.L, k)

    total = PauliSum.empty(h.n_qubits)
    for k_left in range(K + 1):
        left = sum_multiply(powers[k_left], observable, tol)
        left_coeff = c.conjugate() ** k_left / math.factorial(k_left)
        for k_right in range(K + 1 - k_left):
            coeff = left_coeff * c**k_right / math.factorial(k_right)
            total = total + sum_multiply(left, powers[k_right], tol).scale(coeff)
            _guard(total, max_terms, h.L, K, 1, True)
    return _result(total.with_hint(True, tol), K, 1, "direct")


def conjugate_sequence(
    stages: Sequence[Union[SequenceStage, Tuple[HamiltonianSpec, TimeParameter, int]]],
    obs: ObservableLike,
    max_terms: int = DEFAULT_MAX_TERMS,
    tol: float = DEFAULT_TOLERANCE,
) -> ExpansionResult:
    """
    e^{iH_1 t_1}...e^{iH_r t_r} O e^{-iH_r t_r}...e^{-iH_1 t_1}, applying the last
    stage first and feeding each output observable into the next stage.
    """
    current = _observable_sum(obs)
    resolved = [SequenceStage(*stage) for stage in stages]
    for stage in resolved:
        _check_same_qubits(stage.hamiltonian, current)
    if not resolved:
        return _result(current, 0, 1, "concat")
    for index, stage in enumerate(reversed(resolved), start=1):
        logger.debug(f"Applying sequence stage {len(resolved) - index + 1} of {len(resolved)}")
        current = heisenberg_taylor_concat(
            stage.hamiltonian,
            current,
            stage.time,
            stage.order,
            stage.segments,
            max_terms=max_terms,
            tol=tol,
        ).sum
    return _result(
        current,
        max(stage.order for stage in resolved),
        max(stage.segments for stage in resolved),
        "concat",
    )
