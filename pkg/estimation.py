"""
Unbiased estimation of sum_i gamma_i tr(Q_i rho) from Pauli measurement data.

Two routes are offered: importance sampling of single Pauli measurements with
probability |gamma_i|/||gamma||_1, and local (random single-qubit Pauli basis)
classical shadows, which can be reused for any number of sums.

Random numbers come from the counter-based Philox generator. Shots are split
into blocks of ``SHOT_BLOCK_SIZE``; block b of stream s under seed S draws from
``SeedSequence([S, s, b])``, so a run is reproducible whatever the number of
workers that process the blocks.
"""

import json
import logging
import math
from abc import ABC, abstractmethod
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from bounds import hoeffding_radius, propagator_tail_bound, shadow_radius
from expansion import TimeParameter, expand_propagator
from model_io import HamiltonianSpec
from pauli_algebra import DEFAULT_TOLERANCE, PauliString, PauliSum, identity_coefficient

logger = logging.getLogger("pauli_estimation")

# --- Constants ---
DEFAULT_DELTA = 0.05
SHOT_BLOCK_SIZE = 4096
METHODS = ("importance", "shadow", "exact")
BASIS_LETTERS = "XYZ"
_BASIS_CODES = {"X": 1, "Y": 2, "Z": 3}


class EstimationError(ValueError):
    """Raised for inputs no estimator can work with (empty sums, complex weights, ...)."""


def substream(seed: int, stream: int, block: int) -> np.random.Generator:
    """Independent Philox generator for one block of one stream."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, stream, block])))


# --- Data Structures ---
@dataclass
class EstimateReport:
    estimate: complex
    confidence_radius: float
    confidence_level: float
    shots_used: int
    method: str
    seed: Optional[int] = None
    systematic_bound: float = 0.0
    details: Dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        estimate = complex(self.estimate)
        return {
            "estimate": {"real": estimate.real, "imag": estimate.imag},
            "confidence_radius": self.confidence_radius,
            "confidence_level": self.confidence_level,
            "shots_used": self.shots_used,
            "method": self.method,
            "seed": self.seed,
            "systematic_bound": self.systematic_bound,
            "details": self.details,
        }


@dataclass(frozen=True)
class ShadowSnapshot:
    """One randomized measurement: per-qubit basis letters and outcome bits."""

    bases: str
    bits: str

    def __post_init__(self) -> None:
        if len(self.bases) != len(self.bits):
            raise EstimationError(
                f"Snapshot bases ({len(self.bases)}) and bits ({len(self.bits)}) differ in length"
            )
        if any(letter not in _BASIS_CODES for letter in self.bases):
            raise EstimationError(f"Snapshot bases must use X, Y, Z only, got {self.bases!r}")
        if any(bit not in "01" for bit in self.bits):
            raise EstimationError(f"Snapshot bits must use 0 and 1 only, got {self.bits!r}")

    @property
    def n_qubits(self) -> int:
        return len(self.bases)

    def to_dict(self) -> Dict[str, str]:
        return {"bases": self.bases, "bits": self.bits}


class ShadowTable:
    """Array view of a snapshot list: basis codes (X=1, Y=2, Z=3) and outcome bits."""

    def __init__(self, bases: np.ndarray, bits: np.ndarray):
        if bases.shape != bits.shape or bases.ndim != 2:
            raise EstimationError(f"Inconsistent shadow arrays {bases.shape} and {bits.shape}")
        if bases.shape[0] == 0:
            raise EstimationError("Shadow estimation needs at least one snapshot")
        self.bases = bases.astype(np.uint8)
        self.bits = bits.astype(np.uint8)

    @classmethod
    def from_snapshots(cls, snaps: Sequence[ShadowSnapshot]) -> "ShadowTable":
        if not snaps:
            raise EstimationError("Shadow estimation needs at least one snapshot")
        n = snaps[0].n_qubits
        if any(snap.n_qubits != n for snap in snaps):
            raise EstimationError("All snapshots must cover the same number of qubits")
        bases = np.array([[_BASIS_CODES[b] for b in snap.bases] for snap in snaps], dtype=np.uint8)
        bits = np.array([[int(b) for b in snap.bits] for snap in snaps], dtype=np.uint8)
        return cls(bases.reshape(len(snaps), n), bits.reshape(len(snaps), n))

    @property
    def n_snapshots(self) -> int:
        return self.bases.shape[0]

    @property
    def n_qubits(self) -> int:
        return self.bases.shape[1]

    def to_snapshots(self) -> List[ShadowSnapshot]:
        return [
            ShadowSnapshot(
                "".join(BASIS_LETTERS[code - 1] for code in row_bases),
                "".join(str(bit) for bit in row_bits),
            )
            for row_bases, row_bits in zip(self.bases, self.bits)
        ]

    def pauli_values(self, q: PauliString) -> np.ndarray:
        """Single-snapshot estimates 3^w * [bases match q] * (-1)^{sum of bits on q's support}."""
        if q.n_qubits != self.n_qubits:
            raise EstimationError(
                f"Pauli string on {q.n_qubits} qubits, snapshots on {self.n_qubits}"
            )
        support = q.support
        if not support:
            return np.ones(self.n_snapshots)
        wanted = np.array([_BASIS_CODES[q.letter(qubit)] for qubit in support], dtype=np.uint8)
        matches = np.all(self.bases[:, support] == wanted, axis=1)
        parity = self.bits[:, support].sum(axis=1) & 1
        return (3.0 ** len(support)) * matches * (1.0 - 2.0 * parity)


ShadowData = Union[Sequence[ShadowSnapshot], ShadowTable]


def _as_table(snaps: ShadowData) -> ShadowTable:
    return snaps if isinstance(snaps, ShadowTable) else ShadowTable.from_snapshots(list(snaps))


@dataclass(frozen=True)
class SamplingDistribution:
    """p_i = |gamma_i|/||gamma||_1 over signed strings sign(gamma_i) Q_i."""

    strings: Tuple[PauliString, ...]
    signs: np.ndarray
    probabilities: np.ndarray
    cumulative: np.ndarray
    gamma_l1: float

    def draw(self, rng: np.random.Generator, size: int) -> np.ndarray:
        """Indices of ``size`` draws, by binary search in the cumulative table."""
        indices = np.searchsorted(self.cumulative, rng.random(size), side="right")
        return np.minimum(indices, len(self.strings) - 1)


class MeasurementSource(ABC):
    """Access to single-shot Pauli measurements and shadow snapshots of one state."""

    supports_concurrent_sampling: bool = False

    @property
    @abstractmethod
    def n_qubits(self) -> int:
        """Number of qubits of the measured state."""

    @abstractmethod
    def sample_pauli(self, q: PauliString, rng: np.random.Generator) -> int:
        """One outcome in {-1, +1} with mean tr(q rho); +1 for the identity."""

    @abstractmethod
    def draw_shadows(self, count: int, rng: np.random.Generator) -> List[ShadowSnapshot]:
        """``count`` random single-qubit Pauli basis snapshots."""

    def sample_pauli_counts(self, q: PauliString, shots: int, rng: np.random.Generator) -> int:
        """Number of +1 outcomes among ``shots`` measurements of ``q``."""
        return sum(1 for _ in range(shots) if self.sample_pauli(q, rng) == 1)

    def expectation(self, s: PauliSum) -> complex:
        raise NotImplementedError(f"{type(self).__name__} has no exact expectation values")


# --- Operations ---
def build_sampling_distribution(
    s: PauliSum, tol: float = DEFAULT_TOLERANCE
) -> SamplingDistribution:
    if not s:
        raise EstimationError("Cannot sample from an empty Pauli sum")
    strings = []
    weights = []
    signs = []
    for string, coeff in s.items():
        if abs(coeff.imag) > tol:
            raise EstimationError(
                f"Coefficient {coeff} of {string} is complex; split real and imaginary parts first"
            )
        strings.append(string)
        weights.append(abs(coeff.real))
        signs.append(1 if coeff.real >= 0 else -1)
    weights = np.array(weights)
    gamma_l1 = float(weights.sum())
    probabilities = weights / gamma_l1
    cumulative = np.cumsum(probabilities)
    cumulative[-1] = 1.0
    return SamplingDistribution(
        strings=tuple(strings),
        signs=np.array(signs, dtype=np.int64),
        probabilities=probabilities,
        cumulative=cumulative,
        gamma_l1=gamma_l1,
    )


def _block_sizes(N: int) -> List[int]:
    full, rest = divmod(N, SHOT_BLOCK_SIZE)
    return [SHOT_BLOCK_SIZE] * full + ([rest] if rest else [])


def importance_estimate(
    s: PauliSum,
    src: MeasurementSource,
    N: int,
    seed: int,
    delta: float = DEFAULT_DELTA,
    separate_identity: bool = False,
    workers: int = 1,
    stream: int = 0,
) -> EstimateReport:
    """
    Mean of N draws of ||gamma||_1 sign(gamma_i) outcome(Q_i) with i ~ p.

    With ``separate_identity`` the identity coefficient is added exactly and
    only the remaining terms are sampled.
    """
    if N < 1:
        raise EstimationError(f"Need at least one shot, got {N}")
    offset = 0.0
    sampled = s
    if separate_identity:
        offset = identity_coefficient(s).real
        sampled = s - PauliSum.identity(s.n_qubits, offset) if offset else s
        if not sampled:
            return EstimateReport(offset, 0.0, 1 - delta, 0, "importance", seed)
    dist = build_sampling_distribution(sampled)

    def run_block(block: int, size: int) -> int:
        rng = substream(seed, stream, block)
        counts = np.bincount(dist.draw(rng, size), minlength=len(dist.strings))
        total = 0
        for index in np.flatnonzero(counts):
            shots = int(counts[index])
            string = dist.strings[index]
            plus = shots if string.is_identity else src.sample_pauli_counts(string, shots, rng)
            total += int(dist.signs[index]) * (2 * plus - shots)
        return total

    sizes = _block_sizes(N)
    if workers > 1 and not src.supports_concurrent_sampling:
        logger.warning(f"{type(src).__name__} does not allow concurrent sampling; using one worker")
        workers = 1
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            block_totals = list(pool.map(run_block, range(len(sizes)), sizes))
    else:
        block_totals = [run_block(block, size) for block, size in enumerate(sizes)]

    estimate = offset + dist.gamma_l1 * (sum(block_totals) / N)
    radius = hoeffding_radius(dist.gamma_l1, N, delta)
    logger.info(f"Importance estimate {estimate:.6g} +/- {radius:.3g} from {N} shots")
    return EstimateReport(
        estimate=estimate,
        confidence_radius=radius,
        confidence_level=1 - delta,
        shots_used=N,
        method="importance",
        seed=seed,
        details={"gamma_l1": dist.gamma_l1, "blocks": len(sizes)},
    )


def estimate_complex_importance(
    s: PauliSum,
    src: MeasurementSource,
    N: int,
    seed: int,
    delta: float = DEFAULT_DELTA,
    separate_identity: bool = False,
    workers: int = 1,
) -> EstimateReport:
    """Importance sampling of real and imaginary coefficient parts as two real problems."""
    if not s:
        raise EstimationError("Cannot estimate an empty Pauli sum")
    parts = []
    for stream, part in enumerate((s.real_part(), s.imag_part())):
        if part:
            parts.append(
                importance_estimate(part, src, N, seed, delta / 2, separate_identity, workers, stream)
            )
        else:
            parts.append(EstimateReport(0.0, 0.0, 1 - delta / 2, 0, "importance", seed))
    real, imag = parts
    return EstimateReport(
        estimate=complex(real.estimate.real, imag.estimate.real),
        confidence_radius=math.hypot(real.confidence_radius, imag.confidence_radius),
        confidence_level=1 - delta,
        shots_used=real.shots_used + imag.shots_used,
        method="importance",
        seed=seed,
    )


def shadow_estimate_pauli(
    snaps: ShadowData, q: PauliString, groups: Optional[int] = None
) -> float:
    """Mean (or median of ``groups`` means) of single-snapshot estimates of tr(q rho)."""
    values = _as_table(snaps).pauli_values(q)
    if groups is None or groups <= 1:
        return float(values.mean())
    if groups > len(values):
        raise EstimationError(f"Cannot form {groups} groups from {len(values)} snapshots")
    return float(np.median([chunk.mean() for chunk in np.array_split(values, groups)]))


def shadow_estimate_sum(
    snaps: ShadowData,
    s: PauliSum,
    delta: float = DEFAULT_DELTA,
    groups: Optional[int] = None,
) -> EstimateReport:
    """
    sum_i gamma_i * shadow estimate of Q_i, complex gamma allowed.

    The radius inverts ``shadow_shots`` for the snapshot count; when the count
    is below the invertible range it falls back to Hoeffding on the bounded
    single-snapshot estimator. Identity terms are exact and do not widen it.
    """
    if not s:
        raise EstimationError("Cannot estimate an empty Pauli sum")
    table = _as_table(snaps)
    estimate = 0j
    spread = 0.0
    gamma_l1 = 0.0
    w_max = 0
    m_tot = 0
    for string, coeff in s.items():
        estimate += coeff * shadow_estimate_pauli(table, string, groups)
        if string.is_identity:
            continue
        gamma_l1 += abs(coeff)
        spread += abs(coeff) * 3.0**string.weight
        w_max = max(w_max, string.weight)
        m_tot += 1

    radius = 0.0
    if m_tot:
        per_term = shadow_radius(w_max, m_tot, table.n_snapshots, delta)
        if per_term is not None:
            radius = gamma_l1 * per_term
        else:
            radius = hoeffding_radius(spread, table.n_snapshots, delta)
    return EstimateReport(
        estimate=estimate,
        confidence_radius=radius,
        confidence_level=1 - delta,
        shots_used=table.n_snapshots,
        method="shadow",
        details={"w_max": w_max, "m_tot": m_tot, "median_of_means_groups": groups},
    )


def estimate_sum(
    s: PauliSum,
    src: MeasurementSource,
    method: str,
    N: int = 0,
    seed: int = 0,
    delta: float = DEFAULT_DELTA,
    workers: int = 1,
    separate_identity: bool = False,
    snaps: Optional[ShadowData] = None,
) -> EstimateReport:
    """Estimate tr(s rho) with ``exact``, ``importance`` or ``shadow``."""
    if method not in METHODS:
        raise EstimationError(f"Unknown estimation method {method!r}; expected one of {METHODS}")
    if method == "exact":
        return EstimateReport(src.expectation(s), 0.0, 1.0, 0, "exact", seed)
    if method == "shadow":
        if snaps is None:
            snaps = src.draw_shadows(N, substream(seed, 2, 0))
        report = shadow_estimate_sum(snaps, s, delta)
        report.seed = seed
        return report
    if s.is_real or all(abs(coeff.imag) <= DEFAULT_TOLERANCE for _, coeff in s.items()):
        return importance_estimate(s.real_part(), src, N, seed, delta, separate_identity, workers)
    return estimate_complex_importance(s, src, N, seed, delta, separate_identity, workers)


def loschmidt_estimate(
    h: HamiltonianSpec,
    t: TimeParameter,
    K: int,
    src_or_snaps: Union[MeasurementSource, ShadowData],
    method: str = "importance",
    N: int = 0,
    seed: int = 0,
    delta: float = DEFAULT_DELTA,
    workers: int = 1,
) -> EstimateReport:
    """tr(rho e^{-iHt}) from the propagator expansion sum_j beta_j tr(P_j rho)."""
    u = expand_propagator(h, t, K)
    if isinstance(src_or_snaps, MeasurementSource):
        report = estimate_sum(u, src_or_snaps, method, N, seed, delta, workers)
    else:
        report = shadow_estimate_sum(src_or_snaps, u, delta)
    report.systematic_bound = propagator_tail_bound(h.lam * t.value, K, t.is_imaginary)
    report.details["expansion_terms"] = len(u)
    return report


# --- Shadow files ---
def write_shadows_jsonl(path: str, snaps: Iterable[ShadowSnapshot]) -> int:
    count = 0
    with open(path, "w") as f:
        for snap in snaps:
            f.write(json.dumps(snap.to_dict()) + "\n")
            count += 1
    logger.info(f"Wrote {count} shadow snapshots to {path}")
    return count


def read_shadows_jsonl(path: str) -> List[ShadowSnapshot]:
    snaps = []
    with open(path, "r") as f:
        for line_number, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
                snaps.append(ShadowSnapshot(record["bases"], record["bits"]))
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise EstimationError(f"{path}:{line_number}: invalid snapshot record ({exc})") from exc
    if not snaps:
        raise EstimationError(f"No snapshots found in {path}")
    return snaps
