"""
Dense exact simulator used as measurement source, verification oracle and
engine of the end-to-end workflows.

Exact evolution goes through an eigendecomposition of the dense Hamiltonian,
never through the series code it is used to check. Basis index bits follow the
label convention: qubit 0 is the most significant bit, so ``"0101"`` is
index 5.
"""

import json
import logging
import math
import threading
from dataclasses import asdict, dataclass
from functools import reduce
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import scipy.linalg

from bounds import (
    BoundReport,
    compute_bound_report,
    direct_expansion_tail_bound,
    hoeffding_shots,
    propagator_tail_bound,
    segmented_systematic_bound,
    shadow_shots,
)
from estimation import (
    EstimateReport,
    MeasurementSource,
    ShadowSnapshot,
    ShadowTable,
    estimate_sum,
    substream,
)
from expansion import (
    DEFAULT_MAX_ORDER,
    DEFAULT_MAX_TERMS,
    ExpansionResult,
    TimeParameter,
    TruncationOrderError,
    expand_propagator,
    heisenberg_commutator_series,
    heisenberg_direct_expansion,
    heisenberg_taylor_concat,
    select_truncation_order,
)
from model_io import HamiltonianSpec, ObservableSpec, StateSpec
from pauli_algebra import DimensionMismatchError, PauliString, PauliSum, identity_coefficient

logger = logging.getLogger("reference_backend")

# --- Constants ---
DEFAULT_QUBIT_CAP = 12
DEFAULT_DENSITY_CAP = 8
NORMALIZATION_TOLERANCE = 1e-10
BACKENDS = ("exact", "importance", "shadows")
EXPANSION_MODES = ("concat", "direct", "commutator")
# Share of eps given to the propagator in concat mode: (2e + e^2) <= 3e for e <= 1.
CONJUGATION_SPLIT = 3

_SINGLE_QUBIT = {
    "I": np.eye(2, dtype=complex),
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.array([[1, 0], [0, -1]], dtype=complex),
}
_HADAMARD = np.array([[1, 1], [1, -1]], dtype=complex) / math.sqrt(2)
_S_DAGGER = np.array([[1, 0], [0, -1j]], dtype=complex)
# Rotations taking the +1 eigenvector of X, Y, Z to |0>.
_BASIS_ROTATIONS = {1: _HADAMARD, 2: _HADAMARD @ _S_DAGGER, 3: np.eye(2, dtype=complex)}


class QubitCapExceededError(ValueError):
    """The dense simulator refuses systems above its qubit cap."""


class StatisticalRefusalError(RuntimeError):
    """A denominator estimate cannot be distinguished from zero."""


def _check_cap(n_qubits: int, cap: Optional[int] = None) -> None:
    cap = DEFAULT_QUBIT_CAP if cap is None else cap
    if n_qubits > cap:
        raise QubitCapExceededError(f"{n_qubits} qubits exceed the dense simulator cap of {cap}")


def configure_caps(qubit_cap: Optional[int] = None, density_cap: Optional[int] = None) -> None:
    """Override the dense-simulation caps, e.g. from environment variables."""
    global DEFAULT_QUBIT_CAP, DEFAULT_DENSITY_CAP
    if qubit_cap is not None:
        if qubit_cap < 1:
            raise ValueError(f"Qubit cap must be positive, got {qubit_cap}")
        DEFAULT_QUBIT_CAP = qubit_cap
        logger.info(f"Dense simulator qubit cap set to {qubit_cap}")
    if density_cap is not None:
        if density_cap < 1:
            raise ValueError(f"Density-matrix cap must be positive, got {density_cap}")
        DEFAULT_DENSITY_CAP = density_cap


# --- Data Structures ---
@dataclass(frozen=True, eq=False)
class DenseState:
    """Normalized state vector or density matrix; the data array is read-only."""

    n_qubits: int
    representation: str
    data: np.ndarray

    def __post_init__(self) -> None:
        if self.representation not in ("vector", "density"):
            raise ValueError(f"Unknown representation {self.representation!r}")
        cap = DEFAULT_DENSITY_CAP if self.representation == "density" else DEFAULT_QUBIT_CAP
        _check_cap(self.n_qubits, cap)
        dim = 2**self.n_qubits
        data = np.array(self.data, dtype=complex)
        expected = (dim,) if self.representation == "vector" else (dim, dim)
        if data.shape != expected:
            raise ValueError(f"State data has shape {data.shape}, expected {expected}")
        if self.representation == "vector":
            norm = np.linalg.norm(data)
            if abs(norm - 1) > NORMALIZATION_TOLERANCE:
                raise ValueError(f"State vector has norm {norm}, expected 1")
        else:
            trace = np.trace(data)
            if abs(trace - 1) > NORMALIZATION_TOLERANCE:
                raise ValueError(f"Density matrix has trace {trace}, expected 1")
            if not np.allclose(data, data.conj().T, atol=NORMALIZATION_TOLERANCE):
                raise ValueError("Density matrix is not Hermitian")
            if np.linalg.eigvalsh(data).min() < -NORMALIZATION_TOLERANCE:
                raise ValueError("Density matrix is not positive semidefinite")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @classmethod
    def from_basis_string(cls, bits: str) -> "DenseState":
        vector = np.zeros(2 ** len(bits), dtype=complex)
        vector[int(bits, 2)] = 1.0
        return cls(len(bits), "vector", vector)

    @classmethod
    def plus_state(cls, n_qubits: int) -> "DenseState":
        dim = 2**n_qubits
        return cls(n_qubits, "vector", np.full(dim, 1 / math.sqrt(dim), dtype=complex))

    @classmethod
    def from_vector(cls, vector: np.ndarray, normalize: bool = False) -> "DenseState":
        vector = np.asarray(vector, dtype=complex)
        if normalize:
            vector = vector / np.linalg.norm(vector)
        return cls(int(round(math.log2(vector.shape[0]))), "vector", vector)

    @classmethod
    def from_density(cls, matrix: np.ndarray, normalize: bool = False) -> "DenseState":
        matrix = np.asarray(matrix, dtype=complex)
        if normalize:
            matrix = matrix / np.trace(matrix)
        return cls(int(round(math.log2(matrix.shape[0]))), "density", matrix)

    @classmethod
    def from_state_spec(cls, spec: StateSpec) -> "DenseState":
        if spec.kind == "basis":
            return cls.from_basis_string(spec.payload)
        if spec.kind == "preset":
            return cls.plus_state(spec.n_qubits)
        return load_density_matrix(spec.payload)

    @property
    def dim(self) -> int:
        return 2**self.n_qubits

    def density_matrix(self) -> np.ndarray:
        if self.representation == "density":
            return np.array(self.data)
        return np.outer(self.data, self.data.conj())

    def probabilities(self) -> np.ndarray:
        if self.representation == "vector":
            probs = np.abs(self.data) ** 2
        else:
            probs = np.real(np.diag(self.data)).copy()
        probs[probs < 0] = 0.0
        return probs / probs.sum()


@dataclass
class WorkflowConfig:
    """
    Numeric knobs of a workflow. ``K``, ``r`` and ``shots`` set to None are
    resolved automatically: r and K by ``resolve_expansion_parameters``, shots
    from the Hoeffding (or shadow) count.
    """

    eps: float = 1e-3
    delta: float = 0.05
    K: Optional[int] = None
    r: Optional[int] = None
    mode: str = "concat"
    shots: Optional[int] = None
    seed: int = 0
    backend: str = "exact"
    workers: int = 1
    norm_bound: Optional[float] = None
    normalization: str = "state"
    separate_identity: bool = False
    max_terms: int = DEFAULT_MAX_TERMS
    max_order: int = DEFAULT_MAX_ORDER

    def __post_init__(self) -> None:
        if self.eps <= 0:
            raise ValueError(f"eps must be positive, got {self.eps}")
        if not 0 < self.delta < 1:
            raise ValueError(f"delta must lie in (0, 1), got {self.delta}")
        if self.backend not in BACKENDS:
            raise ValueError(f"Unknown backend {self.backend!r}; expected one of {BACKENDS}")
        if self.mode not in EXPANSION_MODES:
            raise ValueError(f"Unknown mode {self.mode!r}; expected one of {EXPANSION_MODES}")
        if self.normalization not in ("state", "partition"):
            raise ValueError(f"Unknown normalization {self.normalization!r}")

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


# --- Oracle bridge ---
def pauli_matrix(p: PauliString) -> np.ndarray:
    """Kronecker product of the 2x2 factors, qubit 0 leftmost."""
    _check_cap(p.n_qubits)
    return reduce(np.kron, [_SINGLE_QUBIT[p.letter(q)] for q in range(p.n_qubits)], np.eye(1, dtype=complex))


def sum_to_matrix(s: PauliSum, cap: Optional[int] = None) -> np.ndarray:
    _check_cap(s.n_qubits, cap)
    matrix = np.zeros((2**s.n_qubits, 2**s.n_qubits), dtype=complex)
    for string, coeff in s.items():
        matrix += coeff * pauli_matrix(string)
    return matrix


def _index_mask(mask: int, n_qubits: int) -> int:
    return sum(1 << (n_qubits - 1 - q) for q in range(n_qubits) if (mask >> q) & 1)


def _pauli_action(p: PauliString) -> Tuple[np.ndarray, np.ndarray]:
    """(target, phase) arrays with P|k> = phase[k] |target[k]>."""
    n = p.n_qubits
    x_index = _index_mask(p.x_mask, n)
    z_index = _index_mask(p.z_mask, n)
    basis = np.arange(2**n)
    parity = np.zeros(2**n, dtype=np.int64)
    for bit in range(n):
        if (z_index >> bit) & 1:
            parity ^= (basis >> bit) & 1
    phase = (1j ** (p.x_mask & p.z_mask).bit_count()) * (1 - 2 * parity)
    return basis ^ x_index, phase


# --- Operations ---
def exact_propagator(h: HamiltonianSpec, time: TimeParameter, shift: bool = False) -> np.ndarray:
    """
    Dense e^{-iHt} or e^{-tau H} from the eigendecomposition of H. ``shift``
    subtracts the ground energy in imaginary time, which only changes the norm.
    """
    energies, vectors = scipy.linalg.eigh(sum_to_matrix(h.to_pauli_sum()))
    if time.is_imaginary:
        offset = energies.min() if shift else 0.0
        factors = np.exp(-time.value * (energies - offset)).astype(complex)
    else:
        factors = np.exp(-1j * time.value * energies)
    return (vectors * factors) @ vectors.conj().T


def exact_evolve(
    h: HamiltonianSpec, state: DenseState, time: TimeParameter
) -> DenseState:
    """Apply e^{-iHt} (or e^{-tau H}, renormalized) through the eigendecomposition of H."""
    if h.n_qubits != state.n_qubits:
        raise DimensionMismatchError(
            f"Hamiltonian on {h.n_qubits} qubits, state on {state.n_qubits}"
        )
    if time.value == 0:
        return state
    propagator = exact_propagator(h, time, shift=True)
    if state.representation == "vector":
        vector = propagator @ state.data
        return DenseState.from_vector(vector, normalize=time.is_imaginary)
    matrix = propagator @ state.data @ propagator.conj().T
    return DenseState.from_density(matrix, normalize=time.is_imaginary)


def exact_loschmidt(h: HamiltonianSpec, state: DenseState, time: TimeParameter) -> complex:
    """tr(rho e^{-iHt}), the dense counterpart of the propagator estimate."""
    if h.n_qubits != state.n_qubits:
        raise DimensionMismatchError(
            f"Hamiltonian on {h.n_qubits} qubits, state on {state.n_qubits}"
        )
    propagator = exact_propagator(h, time)
    if state.representation == "vector":
        return complex(np.vdot(state.data, propagator @ state.data))
    return complex(np.trace(state.data @ propagator))


def exact_expectation(s: PauliSum, state: DenseState) -> complex:
    """sum_i gamma_i tr(Q_i rho), term by term without building matrices."""
    if s.n_qubits != state.n_qubits:
        raise DimensionMismatchError(f"Sum on {s.n_qubits} qubits, state on {state.n_qubits}")
    total = 0j
    for string, coeff in s.items():
        if string.is_identity:
            total += coeff
            continue
        target, phase = _pauli_action(string)
        if state.representation == "vector":
            value = np.vdot(state.data[target], phase * state.data)
        else:
            value = np.sum(phase * state.data[np.arange(state.dim), target])
        total += coeff * value
    return complex(total)


def sample_pauli_measurement(
    state: DenseState, q: PauliString, rng: np.random.Generator
) -> int:
    if q.is_identity:
        return 1
    p_plus = _plus_probability(state, q)
    return 1 if rng.random() < p_plus else -1


def _plus_probability(state: DenseState, q: PauliString) -> float:
    expectation = exact_expectation(PauliSum.from_terms(q.n_qubits, [(1.0, q)]), state).real
    return min(1.0, max(0.0, (1 + expectation) / 2))


def _rotate(state: DenseState, codes: np.ndarray) -> np.ndarray:
    """Computational-basis probabilities after rotating each qubit into its basis."""
    n = state.n_qubits
    if state.representation == "vector":
        tensor = state.data.reshape([2] * n)
        for qubit, code in enumerate(codes):
            tensor = np.moveaxis(np.tensordot(_BASIS_ROTATIONS[int(code)], tensor, axes=([1], [qubit])), 0, qubit)
        probs = np.abs(tensor.reshape(-1)) ** 2
    else:
        tensor = state.data.reshape([2] * (2 * n))
        for qubit, code in enumerate(codes):
            rotation = _BASIS_ROTATIONS[int(code)]
            tensor = np.moveaxis(np.tensordot(rotation, tensor, axes=([1], [qubit])), 0, qubit)
            tensor = np.moveaxis(
                np.tensordot(rotation.conj(), tensor, axes=([1], [n + qubit])), 0, n + qubit
            )
        probs = np.real(np.diag(tensor.reshape(2**n, 2**n))).copy()
    probs[probs < 0] = 0.0
    return probs / probs.sum()


def generate_shadow_table(
    state: DenseState, N: int, rng: np.random.Generator
) -> ShadowTable:
    """N local-Pauli snapshots, grouped by basis pattern so each rotation is done once."""
    if N < 1:
        raise ValueError(f"Need at least one snapshot, got {N}")
    n = state.n_qubits
    bases = rng.integers(1, 4, size=(N, n), dtype=np.uint8)
    bits = np.zeros((N, n), dtype=np.uint8)
    patterns, inverse = np.unique(bases, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    shifts = np.arange(n - 1, -1, -1)
    for index, codes in enumerate(patterns):
        rows = np.flatnonzero(inverse == index)
        outcomes = rng.choice(state.dim, size=len(rows), p=_rotate(state, codes))
        bits[rows] = (outcomes[:, None] >> shifts) & 1
    logger.debug(f"Generated {N} snapshots over {len(patterns)} basis patterns")
    return ShadowTable(bases, bits)


def generate_shadows(
    state: DenseState, N: int, rng: np.random.Generator
) -> List[ShadowSnapshot]:
    return generate_shadow_table(state, N, rng).to_snapshots()


class ExactSimulatorSource(MeasurementSource):
    """Measurement source backed by a dense state; outcomes use exact probabilities."""

    supports_concurrent_sampling = True

    def __init__(self, state: DenseState):
        self.state = state
        self._plus_cache: Dict[PauliString, float] = {}
        self._lock = threading.Lock()

    @property
    def n_qubits(self) -> int:
        return self.state.n_qubits

    def _p_plus(self, q: PauliString) -> float:
        with self._lock:
            cached = self._plus_cache.get(q)
        if cached is None:
            cached = 1.0 if q.is_identity else _plus_probability(self.state, q)
            with self._lock:
                self._plus_cache[q] = cached
        return cached

    def sample_pauli(self, q: PauliString, rng: np.random.Generator) -> int:
        return 1 if rng.random() < self._p_plus(q) else -1

    def sample_pauli_counts(self, q: PauliString, shots: int, rng: np.random.Generator) -> int:
        return int(rng.binomial(shots, self._p_plus(q)))

    def draw_shadows(self, count: int, rng: np.random.Generator) -> List[ShadowSnapshot]:
        return generate_shadows(self.state, count, rng)

    def draw_shadow_table(self, count: int, rng: np.random.Generator) -> ShadowTable:
        return generate_shadow_table(self.state, count, rng)

    def expectation(self, s: PauliSum) -> complex:
        return exact_expectation(s, self.state)


# --- State files ---
def load_density_matrix(path: str) -> DenseState:
    """Read ``{"n_qubits": n, "entries": [[re, im], ...]}`` (row-major)."""
    with open(path, "r") as f:
        record = json.load(f)
    try:
        n = int(record["n_qubits"])
        entries = np.array([complex(re, im) for re, im in record["entries"]], dtype=complex)
    except (KeyError, TypeError, ValueError) as exc:
        raise ValueError(f"{path}: invalid density-matrix container ({exc})") from exc
    _check_cap(n, DEFAULT_DENSITY_CAP)
    if entries.size != 4**n:
        raise ValueError(f"{path}: expected {4**n} entries for {n} qubits, got {entries.size}")
    return DenseState(n, "density", entries.reshape(2**n, 2**n))


def save_state(path: str, state: DenseState) -> None:
    matrix = state.density_matrix()
    record = {
        "n_qubits": state.n_qubits,
        "entries": [[value.real, value.imag] for value in matrix.reshape(-1)],
    }
    with open(path, "w") as f:
        json.dump(record, f)
    logger.info(f"Saved {state.n_qubits}-qubit density matrix to {path}")


# --- Workflow helpers ---
def resolve_order(Lambda: float, eps: float, imaginary: bool, max_order: int = DEFAULT_MAX_ORDER) -> int:
    if not imaginary:
        return select_truncation_order(Lambda, eps, max_order)
    for K in range(max_order + 1):
        if propagator_tail_bound(Lambda, K, imaginary=True) <= eps:
            return K
    raise TruncationOrderError(f"No imaginary-time order up to {max_order} reaches eps={eps:g}")


def _imaginary_segment_order(
    Lambda: float, r: int, eps: float, norm_o: float, conjugated: bool, max_order: int
) -> int:
    for K in range(max_order + 1):
        if segmented_systematic_bound(Lambda, K, r, norm_o, conjugated, imaginary=True) <= eps:
            return K
    raise TruncationOrderError(
        f"No imaginary-time order up to {max_order} reaches eps={eps:g} over {r} segments"
    )


def resolve_expansion_parameters(
    norm_h: float,
    t: TimeParameter,
    eps: float,
    mode: str,
    norm_o: float = 1.0,
    K: Optional[int] = None,
    r: Optional[int] = None,
    max_order: int = DEFAULT_MAX_ORDER,
) -> Tuple[int, int]:
    """
    (K, r) for one expansion; explicit values win.

    concat: r = ceil(||H|| t), per-segment budget eps/(3r). propagator-only:
    budget eps/r. Imaginary time instead scans K until the compounded
    ``segmented_systematic_bound`` fits eps. direct and commutator: r = 1 and
    the direct tail ||O|| (2 Lambda)^{K+1}/(K+1)! must fit eps.
    """
    if mode in ("direct", "commutator"):
        r = 1
        if K is None:
            K = resolve_order(2 * norm_h * t.value, eps / max(norm_o, 1e-300), t.is_imaginary, max_order)
        return K, r
    r = r or max(1, math.ceil(norm_h * t.value))
    if K is None and t.is_imaginary:
        K = _imaginary_segment_order(norm_h * t.value / r, r, eps, norm_o, mode == "concat", max_order)
    elif K is None:
        split = CONJUGATION_SPLIT if mode == "concat" else 1
        K = resolve_order(norm_h * t.value / r, eps / (split * r), t.is_imaginary, max_order)
    return K, r


def expand_observable(
    h: HamiltonianSpec, obs: ObservableSpec, t: TimeParameter, cfg: WorkflowConfig
) -> Tuple[ExpansionResult, BoundReport]:
    """Run the configured Heisenberg expansion with auto r/K and return its bounds."""
    norm_h = h.lam if cfg.norm_bound is None else cfg.norm_bound
    K, r = resolve_expansion_parameters(
        norm_h, t, cfg.eps, cfg.mode, obs.norm_bound, cfg.K, cfg.r, cfg.max_order
    )
    if cfg.mode == "concat":
        result = heisenberg_taylor_concat(h, obs, t, K, r, max_terms=cfg.max_terms)
    else:
        expand = heisenberg_direct_expansion if cfg.mode == "direct" else heisenberg_commutator_series
        result = expand(h, obs, t, K, max_terms=cfg.max_terms)
    report = compute_bound_report(
        result.mode,
        h.lam,
        t.value,
        K,
        r,
        cfg.eps,
        cfg.delta,
        obs.norm_bound,
        h.L,
        result.stats.m_tot,
        result.stats.gamma_l1,
        result.stats.w_max,
        norm_h=norm_h,
        observable_terms=max(len(obs.observable), 1),
        observable_l1=obs.observable.coefficient_l1(),
        imaginary=t.is_imaginary,
    )
    logger.info(f"Resolved K={K}, r={r}; systematic bound {report.total_systematic:.3g}")
    return result, report


def resolve_shots(s: PauliSum, cfg: WorkflowConfig) -> int:
    if cfg.shots is not None:
        return cfg.shots
    gamma_l1 = s.coefficient_l1()
    if cfg.backend == "shadows":
        non_identity = [string for string, _ in s.items() if not string.is_identity]
        if not non_identity or gamma_l1 <= cfg.eps:
            return 1
        w_max = max(string.weight for string in non_identity)
        return shadow_shots(w_max, len(non_identity), min(cfg.eps / gamma_l1, 0.5), cfg.delta)
    return max(1, hoeffding_shots(gamma_l1, cfg.eps, cfg.delta))


def estimate_with_backend(
    s: PauliSum,
    state: DenseState,
    cfg: WorkflowConfig,
    seed_offset: int = 0,
    snaps: Optional[List[ShadowSnapshot]] = None,
) -> EstimateReport:
    """tr(s rho) by exact expectation, importance sampling or shadows, per ``cfg.backend``."""
    src = ExactSimulatorSource(state)
    method = {"exact": "exact", "importance": "importance", "shadows": "shadow"}[cfg.backend]
    shots = 0 if method == "exact" else resolve_shots(s, cfg)
    seed = cfg.seed + seed_offset
    if method == "shadow" and snaps is None:
        snaps = src.draw_shadow_table(shots, substream(seed, 2, 0))
    return estimate_sum(
        s,
        src,
        method,
        N=shots,
        seed=seed,
        delta=cfg.delta,
        workers=cfg.workers,
        separate_identity=cfg.separate_identity,
        snaps=snaps,
    )


# --- Workflows ---
def verify_hamiltonian_residual(
    h_sys: HamiltonianSpec,
    h_guess: HamiltonianSpec,
    obs: ObservableSpec,
    t: TimeParameter,
    state: DenseState,
    cfg: WorkflowConfig,
) -> EstimateReport:
    """
    Estimate tr(O(-t) rho(t)) - tr(O rho), with rho(t) evolved under h_sys and
    O(-t) backpropagated under h_guess; zero up to the bounds when they agree.
    """
    for spec in (h_sys, h_guess):
        if spec.n_qubits != state.n_qubits or obs.n_qubits != state.n_qubits:
            raise DimensionMismatchError("Hamiltonians, observable and state must share qubits")
    if t.value == 0:
        return EstimateReport(0.0, 0.0, 1.0, 0, cfg.backend, cfg.seed)

    baseline = exact_expectation(obs.observable, state)
    evolved = exact_evolve(h_sys, state, t)
    backwards = h_guess.scaled(-1)
    result, bound = expand_observable(backwards, obs, t, cfg)
    report = estimate_with_backend(result.sum, evolved, cfg)
    report.estimate = report.estimate - baseline
    report.systematic_bound = bound.total_systematic
    oracle = exact_expectation(obs.observable, exact_evolve(backwards, evolved, t)) - baseline
    report.details.update(
        {
            "baseline": baseline.real,
            "oracle_residual": oracle.real,
            "expansion": result.stats.to_dict(),
            "bounds": bound.to_dict(),
        }
    )
    logger.info(
        f"Verification residual {report.estimate.real:.6g} "
        f"(systematic {bound.total_systematic:.3g}, sampling {report.confidence_radius:.3g})"
    )
    return report


def imaginary_time_energy(
    h: HamiltonianSpec,
    state: DenseState,
    tau: float,
    K: Optional[int],
    cfg: WorkflowConfig,
) -> EstimateReport:
    """
    tr(H e^{-tau H} rho e^{-tau H}) / tr(e^{-2 tau H} rho) from two expansions.

    With ``cfg.normalization == "partition"`` the denominator is the
    state-independent Z = tr(e^{-2 tau H}) instead.
    """
    if h.n_qubits != state.n_qubits:
        raise DimensionMismatchError(f"Hamiltonian on {h.n_qubits} qubits, state on {state.n_qubits}")
    time = TimeParameter.imaginary(tau)
    norm_h = h.lam if cfg.norm_bound is None else cfg.norm_bound
    Lambda = norm_h * tau
    if K is None:
        K = resolve_order(2 * Lambda, cfg.eps, True, cfg.max_order)

    energy_obs = ObservableSpec.from_sum(h.to_pauli_sum(), norm_h)
    numerator_sum = heisenberg_direct_expansion(h, energy_obs, time, K, max_terms=cfg.max_terms).sum
    denominator_sum = expand_propagator(h, TimeParameter.imaginary(2 * tau), K, cfg.max_terms)

    numerator = estimate_with_backend(numerator_sum, state, cfg, seed_offset=0)
    numerator_bias = direct_expansion_tail_bound(Lambda, K, norm_h) * math.exp(2 * Lambda)
    denominator_bias = propagator_tail_bound(2 * Lambda, K, imaginary=True)

    if cfg.normalization == "partition":
        partition = 2**h.n_qubits * identity_coefficient(denominator_sum).real
        denominator_value, denominator_radius = partition, 0.0
        denominator_bias *= 2**h.n_qubits
    else:
        denominator = estimate_with_backend(denominator_sum, state, cfg, seed_offset=1)
        denominator_value = denominator.estimate.real
        denominator_radius = denominator.confidence_radius

    margin = abs(denominator_value) - denominator_radius
    if margin <= 0:
        raise StatisticalRefusalError(
            f"Denominator {denominator_value:.4g} is within its radius {denominator_radius:.3g} of zero"
        )
    energy = numerator.estimate.real / denominator_value
    radius = (numerator.confidence_radius + abs(energy) * denominator_radius) / margin
    systematic_margin = margin - denominator_bias
    systematic = (
        (numerator_bias + abs(energy) * denominator_bias) / systematic_margin
        if systematic_margin > 0
        else float("inf")
    )
    logger.info(f"Imaginary-time energy at tau={tau}: {energy:.6g} +/- {radius:.3g}")
    return EstimateReport(
        estimate=energy,
        confidence_radius=radius,
        confidence_level=1 - cfg.delta,
        shots_used=numerator.shots_used + (0 if cfg.normalization == "partition" else denominator.shots_used),
        method=numerator.method,
        seed=cfg.seed,
        systematic_bound=systematic,
        details={
            "K": K,
            "numerator": numerator.estimate.real,
            "denominator": denominator_value,
            "normalization": cfg.normalization,
        },
    )


def partition_trace(
    h: HamiltonianSpec, tau: float, K: int, cap: Optional[int] = None
) -> EstimateReport:
    """Z = tr(e^{-2 tau H}) = 2^n * identity coefficient of the expanded e^{-2 tau H}."""
    expanded = expand_propagator(h, TimeParameter.imaginary(2 * tau), K)
    dim = 2**h.n_qubits
    value = dim * identity_coefficient(expanded).real
    details: Dict[str, Any] = {"K": K, "expansion_terms": len(expanded)}
    if h.n_qubits <= (DEFAULT_QUBIT_CAP if cap is None else cap):
        energies = scipy.linalg.eigvalsh(sum_to_matrix(h.to_pauli_sum(), cap))
        details["exact"] = float(np.exp(-2 * tau * energies).sum())
    return EstimateReport(
        estimate=value,
        confidence_radius=0.0,
        confidence_level=1.0,
        shots_used=0,
        method="exact",
        systematic_bound=dim * propagator_tail_bound(2 * h.lam * tau, K, imaginary=True),
        details=details,
    )


def hybrid_time_extension(
    h: HamiltonianSpec,
    obs: ObservableSpec,
    state: DenseState,
    t1: float,
    t2: float,
    cfg: WorkflowConfig,
) -> EstimateReport:
    """
    Prepare rho(t1) by exact evolution, then extend classically by t2 with the
    Heisenberg expansion: estimates tr(O rho(t1 + t2)).
    """
    prepared = exact_evolve(h, state, TimeParameter.real(t1))
    result, bound = expand_observable(h, obs, TimeParameter.real(t2), cfg)
    report = estimate_with_backend(result.sum, prepared, cfg)
    report.systematic_bound = bound.total_systematic
    exact = exact_expectation(obs.observable, exact_evolve(h, state, TimeParameter.real(t1 + t2)))
    report.details.update(
        {
            "t1": t1,
            "t2": t2,
            "exact": exact.real,
            "expansion": result.stats.to_dict(),
            "bounds": bound.to_dict(),
        }
    )
    return report
