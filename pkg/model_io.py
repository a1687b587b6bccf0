"""
Parsers and builders for Hamiltonians, observables and initial states.

The plain-text model format has one term per line, ``<coefficient> <pauli>``,
with ``#`` starting a comment. Example::

    # open Heisenberg pair
    1.0 XX
    1.0 YY
    1.0 ZZ
"""

import logging
import os
from dataclasses import dataclass, field
from typing import Iterator, List, Optional, Tuple

from pauli_algebra import PauliString, PauliSum

logger = logging.getLogger("model_io")

# --- Constants ---
COMMENT_CHAR = "#"
STATE_PRESETS = ("neel", "basis", "plus")
_MINUS_SIGNS = {"−": "-", "–": "-"}


class ModelParseError(ValueError):
    """Raised for malformed model text; carries the offending line number."""

    def __init__(self, message: str, line_number: Optional[int] = None):
        self.line_number = line_number
        prefix = f"line {line_number}: " if line_number is not None else ""
        super().__init__(f"{prefix}{message}")


# --- Data Structures ---
@dataclass(frozen=True)
class HamiltonianSpec:
    """H = sum_l alpha_l H_l with real nonzero alpha_l and distinct non-identity H_l."""

    n_qubits: int
    terms: Tuple[Tuple[float, PauliString], ...]

    def __post_init__(self) -> None:
        seen = set()
        for alpha, string in self.terms:
            if string.n_qubits != self.n_qubits:
                raise ModelParseError(
                    f"Term {string} acts on {string.n_qubits} qubits, expected {self.n_qubits}"
                )
            if string.is_identity:
                raise ModelParseError("Identity terms are not allowed in a Hamiltonian")
            if alpha == 0.0:
                raise ModelParseError(f"Term {string} has a zero coefficient")
            if string in seen:
                raise ModelParseError(f"Duplicate Hamiltonian term {string}")
            seen.add(string)

    @property
    def lam(self) -> float:
        """lambda = sum_l |alpha_l|, the certified bound on the operator norm."""
        return float(sum(abs(alpha) for alpha, _ in self.terms))

    @property
    def L(self) -> int:
        return len(self.terms)

    @property
    def w(self) -> int:
        return max((string.weight for _, string in self.terms), default=0)

    def to_pauli_sum(self) -> PauliSum:
        return PauliSum.from_terms(self.n_qubits, self.terms, hermitian_hint=True)

    def scaled(self, factor: float) -> "HamiltonianSpec":
        if factor == 0:
            raise ValueError("Scaling a Hamiltonian by zero removes every term")
        return HamiltonianSpec(
            self.n_qubits, tuple((alpha * factor, string) for alpha, string in self.terms)
        )

    def with_coefficient(self, index: int, value: float) -> "HamiltonianSpec":
        """Copy with term ``index`` reweighted, e.g. to perturb a guess model."""
        terms = list(self.terms)
        terms[index] = (float(value), terms[index][1])
        return HamiltonianSpec(self.n_qubits, tuple(terms))

    def to_dict(self) -> dict:
        return {
            "n_qubits": self.n_qubits,
            "L": self.L,
            "lambda": self.lam,
            "w": self.w,
        }


@dataclass(frozen=True)
class ObservableSpec:
    """A Hermitian observable as a real-coefficient Pauli sum."""

    observable: PauliSum
    norm_bound: float = field(default=-1.0)

    def __post_init__(self) -> None:
        if not self.observable.is_real:
            raise ModelParseError("Observables must have real coefficients")
        if not self.observable.hermitian_hint:
            object.__setattr__(self, "observable", self.observable.with_hint(True))
        if self.norm_bound < 0:
            object.__setattr__(self, "norm_bound", self.observable.coefficient_l1())

    @classmethod
    def from_sum(cls, observable: PauliSum, norm_bound: Optional[float] = None) -> "ObservableSpec":
        return cls(observable, -1.0 if norm_bound is None else float(norm_bound))

    @classmethod
    def from_label(cls, label: str, coeff: float = 1.0) -> "ObservableSpec":
        string = PauliString.from_label(label)
        return cls.from_sum(PauliSum.from_terms(string.n_qubits, [(coeff, string)]))

    @property
    def n_qubits(self) -> int:
        return self.observable.n_qubits

    @property
    def w_O(self) -> int:
        return self.observable.max_weight()


@dataclass(frozen=True)
class StateSpec:
    """kind is one of ``basis``, ``preset`` or ``density_file``."""

    kind: str
    payload: str

    @property
    def n_qubits(self) -> Optional[int]:
        if self.kind == "basis":
            return len(self.payload)
        if self.kind == "preset":
            return int(self.payload.split(":", 1)[1])
        return None


# --- Parsing ---
class ModelParser:
    """Parses the line-oriented model format shared by Hamiltonians and observables."""

    @staticmethod
    def iter_terms(text: str) -> Iterator[Tuple[int, float, PauliString]]:
        """Yield (line_number, coefficient, string) for each non-comment line."""
        n_qubits = None
        for line_number, line in enumerate(text.splitlines(), start=1):
            content = line.split(COMMENT_CHAR, 1)[0].strip()
            if not content:
                continue
            fields = content.split()
            if len(fields) != 2:
                raise ModelParseError(
                    f"Expected '<coefficient> <pauli_string>', got {content!r}", line_number
                )
            coeff_text, label = fields
            coeff = ModelParser.parse_coefficient(coeff_text, line_number)
            try:
                string = PauliString.from_label(label)
            except ValueError as exc:
                raise ModelParseError(str(exc), line_number) from exc
            if n_qubits is None:
                n_qubits = string.n_qubits
            elif string.n_qubits != n_qubits:
                raise ModelParseError(
                    f"Inconsistent string length {string.n_qubits}, expected {n_qubits}",
                    line_number,
                )
            yield line_number, coeff, string

    @staticmethod
    def parse_coefficient(text: str, line_number: Optional[int] = None) -> float:
        for sign, replacement in _MINUS_SIGNS.items():
            text = text.replace(sign, replacement)
        try:
            value = float(text)
        except ValueError as exc:
            raise ModelParseError(f"Malformed coefficient {text!r}", line_number) from exc
        if value != value or value in (float("inf"), float("-inf")):
            raise ModelParseError(f"Coefficient must be finite, got {text!r}", line_number)
        return value

    @staticmethod
    def merge_terms(text: str, allow_identity: bool) -> Tuple[int, List[Tuple[float, PauliString]]]:
        merged = {}
        n_qubits = None
        for line_number, coeff, string in ModelParser.iter_terms(text):
            if string.is_identity and not allow_identity:
                raise ModelParseError("All-identity term is not allowed", line_number)
            n_qubits = string.n_qubits
            if string in merged:
                logger.warning(f"Merging duplicate term {string} (line {line_number})")
                merged[string] += coeff
            else:
                merged[string] = coeff
        if n_qubits is None:
            raise ModelParseError("Model specification contains no terms")
        terms = []
        for string, coeff in merged.items():
            if coeff == 0.0:
                logger.warning(f"Term {string} cancelled to zero after merging and was dropped")
                continue
            terms.append((coeff, string))
        if not terms:
            raise ModelParseError("All terms cancelled; model is empty")
        return n_qubits, terms


def parse_hamiltonian(text: str) -> HamiltonianSpec:
    n_qubits, terms = ModelParser.merge_terms(text, allow_identity=False)
    spec = HamiltonianSpec(n_qubits, tuple(terms))
    logger.debug(f"Parsed Hamiltonian: n={spec.n_qubits}, L={spec.L}, lambda={spec.lam}")
    return spec


def parse_observable(text: str, norm_bound: Optional[float] = None) -> ObservableSpec:
    n_qubits, terms = ModelParser.merge_terms(text, allow_identity=True)
    return ObservableSpec.from_sum(PauliSum.from_terms(n_qubits, terms), norm_bound)


def serialize_hamiltonian(spec: HamiltonianSpec) -> str:
    return "".join(f"{alpha!r} {string.to_label()}\n" for alpha, string in spec.terms)


def serialize_observable(obs: ObservableSpec) -> str:
    return "".join(
        f"{coeff.real!r} {string.to_label()}\n" for string, coeff in obs.observable.items()
    )


# --- Builders ---
def build_heisenberg_chain(n: int, J: float) -> HamiltonianSpec:
    """Open chain sum_i J (X_i X_{i+1} + Y_i Y_{i+1} + Z_i Z_{i+1})."""
    if n < 2:
        raise ValueError(f"A Heisenberg chain needs at least 2 sites, got {n}")
    if J == 0:
        raise ValueError("Coupling J must be nonzero")
    terms = []
    for site in range(n - 1):
        for letter in "XYZ":
            label = ["I"] * n
            label[site] = letter
            label[site + 1] = letter
            terms.append((float(J), PauliString.from_label("".join(label))))
    return HamiltonianSpec(n, tuple(terms))


def build_staggered_magnetization(n: int) -> ObservableSpec:
    """Particle imbalance sum_i (-1)^i Z_i."""
    if n < 1:
        raise ValueError(f"Need at least one site, got {n}")
    terms = []
    for site in range(n):
        label = ["I"] * n
        label[site] = "Z"
        terms.append(((-1.0) ** site, PauliString.from_label("".join(label))))
    return ObservableSpec.from_sum(PauliSum.from_terms(n, terms))


def parse_state(spec: str) -> StateSpec:
    """
    Parse ``neel:<n>``, ``basis:<bits>``, ``plus:<n>`` or a density-matrix file path.
    """
    spec = spec.strip()
    prefix, sep, payload = spec.partition(":")
    if sep and prefix.lower() in STATE_PRESETS:
        prefix = prefix.lower()
        if prefix == "basis":
            if not payload or any(bit not in "01" for bit in payload):
                raise ModelParseError(f"Invalid basis bits {payload!r}; use only 0 and 1")
            return StateSpec("basis", payload)
        n = _parse_site_count(payload, prefix)
        if prefix == "neel":
            return StateSpec("basis", "".join("01"[site % 2] for site in range(n)))
        return StateSpec("preset", f"plus:{n}")
    if os.path.exists(spec) or spec.endswith(".json"):
        return StateSpec("density_file", spec)
    raise ModelParseError(f"Unknown state preset {spec!r}; use one of {', '.join(STATE_PRESETS)}")


def _parse_site_count(payload: str, preset: str) -> int:
    try:
        n = int(payload)
    except ValueError as exc:
        raise ModelParseError(f"Preset '{preset}' needs an integer site count, got {payload!r}") from exc
    if n < 1:
        raise ModelParseError(f"Preset '{preset}' needs a positive site count, got {n}")
    return n


# --- File loading ---
def load_hamiltonian(source: str) -> HamiltonianSpec:
    """Load from a file path or the ``heisenberg:<n>:<J>`` preset."""
    if source.startswith("heisenberg:"):
        parts = source.split(":")
        if len(parts) != 3:
            raise ModelParseError(f"Expected 'heisenberg:<n>:<J>', got {source!r}")
        try:
            return build_heisenberg_chain(int(parts[1]), float(parts[2]))
        except ValueError as exc:
            raise ModelParseError(f"Invalid Heisenberg preset {source!r}: {exc}") from exc
    with open(source, "r") as f:
        return parse_hamiltonian(f.read())


def load_observable(source: str, norm_bound: Optional[float] = None) -> ObservableSpec:
    """Load from a file path, ``pauli:<label>`` or ``staggered:<n>``."""
    if source.startswith("pauli:"):
        try:
            obs = ObservableSpec.from_label(source.split(":", 1)[1])
        except ValueError as exc:
            raise ModelParseError(str(exc)) from exc
        return obs if norm_bound is None else ObservableSpec.from_sum(obs.observable, norm_bound)
    if source.startswith("staggered:"):
        obs = build_staggered_magnetization(_parse_site_count(source.split(":", 1)[1], "staggered"))
        return obs if norm_bound is None else ObservableSpec.from_sum(obs.observable, norm_bound)
    with open(source, "r") as f:
        return parse_observable(f.read(), norm_bound)
