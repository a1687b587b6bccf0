"""
Symbolic algebra of n-qubit Pauli strings and complex-weighted Pauli sums.

Pauli strings are stored phase-free in the symplectic (x, z) bit-pair encoding:
bit q of ``x_mask``/``z_mask`` describes qubit q, and qubit q carries
I/X/Y/Z for (x, z) = (0,0)/(1,0)/(1,1)/(0,1). The text form has one letter
per qubit, leftmost letter = qubit 0.
"""

import logging
from dataclasses import dataclass
from typing import Dict, Iterable, Iterator, List, Mapping, Optional, Tuple, Union

logger = logging.getLogger("pauli_algebra")

# --- Constants ---
DEFAULT_TOLERANCE = 1e-12
PAULI_LETTERS = "IXYZ"

_LETTER_TO_BITS = {"I": (0, 0), "X": (1, 0), "Y": (1, 1), "Z": (0, 1)}
_BITS_TO_LETTER = {bits: letter for letter, bits in _LETTER_TO_BITS.items()}
_PHASE_VALUES = (1 + 0j, 1j, -1 + 0j, -1j)

Number = Union[int, float, complex]
MaskPair = Tuple[int, int]


class DimensionMismatchError(ValueError):
    """Raised when operands act on different numbers of qubits."""


class HermiticityError(ValueError):
    """Raised when a sum flagged Hermitian keeps an imaginary coefficient."""


def _check_dimensions(n_a: int, n_b: int) -> None:
    if n_a != n_b:
        raise DimensionMismatchError(
            f"Operands act on {n_a} and {n_b} qubits respectively"
        )


def _product_exponent(x1: int, z1: int, x2: int, z2: int) -> int:
    """
    Exponent e with P(x1,z1)·P(x2,z2) = i^e · P(x1^x2, z1^z2).

    Uses P(x,z) = i^{x·z} X^x Z^z and Z^z X^x = (-1)^{z·x} X^x Z^z, which is the
    per-qubit Pauli table summed over all qubits at once.
    """
    x3 = x1 ^ x2
    z3 = z1 ^ z2
    return (
        (x1 & z1).bit_count()
        + (x2 & z2).bit_count()
        + 2 * (z1 & x2).bit_count()
        - (x3 & z3).bit_count()
    ) & 3


# --- Data Structures ---
@dataclass(frozen=True)
class Phase:
    """A power of i, closed under addition of exponents mod 4."""

    exponent: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "exponent", self.exponent % 4)

    def __add__(self, other: "Phase") -> "Phase":
        return Phase(self.exponent + other.exponent)

    @property
    def value(self) -> complex:
        return _PHASE_VALUES[self.exponent]


@dataclass(frozen=True, order=True)
class PauliString:
    """Phase-free tensor product of single-qubit Paulis."""

    n_qubits: int
    x_mask: int
    z_mask: int

    def __post_init__(self) -> None:
        if self.n_qubits < 0:
            raise ValueError(f"Number of qubits must be non-negative, got {self.n_qubits}")
        limit = 1 << self.n_qubits
        if not (0 <= self.x_mask < limit and 0 <= self.z_mask < limit):
            raise ValueError(
                f"Masks ({self.x_mask}, {self.z_mask}) do not fit in {self.n_qubits} qubits"
            )

    @classmethod
    def from_label(cls, label: str) -> "PauliString":
        """Parse a label such as ``"IXYZ"`` (leftmost letter is qubit 0)."""
        letters = label.strip()
        x_mask = 0
        z_mask = 0
        for qubit, letter in enumerate(letters):
            if letter not in _LETTER_TO_BITS:
                raise ValueError(f"Invalid Pauli character {letter!r} in {label!r}")
            x_bit, z_bit = _LETTER_TO_BITS[letter]
            x_mask |= x_bit << qubit
            z_mask |= z_bit << qubit
        return cls(len(letters), x_mask, z_mask)

    @classmethod
    def identity(cls, n_qubits: int) -> "PauliString":
        return cls(n_qubits, 0, 0)

    def to_label(self) -> str:
        return "".join(self.letter(q) for q in range(self.n_qubits))

    def letter(self, qubit: int) -> str:
        return _BITS_TO_LETTER[((self.x_mask >> qubit) & 1, (self.z_mask >> qubit) & 1)]

    @property
    def is_identity(self) -> bool:
        return self.x_mask == 0 and self.z_mask == 0

    @property
    def weight(self) -> int:
        return (self.x_mask | self.z_mask).bit_count()

    @property
    def support(self) -> List[int]:
        mask = self.x_mask | self.z_mask
        return [q for q in range(self.n_qubits) if (mask >> q) & 1]

    def symplectic_form(self, other: "PauliString") -> int:
        """Parity of a.x·b.z + a.z·b.x; 0 means the strings commute."""
        _check_dimensions(self.n_qubits, other.n_qubits)
        return (
            (self.x_mask & other.z_mask).bit_count()
            + (self.z_mask & other.x_mask).bit_count()
        ) & 1

    def commutes_with(self, other: "PauliString") -> bool:
        return self.symplectic_form(other) == 0

    def __str__(self) -> str:
        return self.to_label()


class PauliSum:
    """
    Immutable canonical map PauliString -> complex coefficient.

    Terms are kept sorted by their (x, z) masks so that every computation that
    iterates over a sum does so in the same order, whatever order the sum was
    built in.
    """

    __slots__ = ("n_qubits", "hermitian_hint", "_terms")

    def __init__(
        self,
        n_qubits: int,
        terms: Optional[Mapping[PauliString, Number]] = None,
        hermitian_hint: bool = False,
        tol: float = DEFAULT_TOLERANCE,
    ):
        raw: Dict[MaskPair, complex] = {}
        for string, coeff in (terms or {}).items():
            _check_dimensions(n_qubits, string.n_qubits)
            key = (string.x_mask, string.z_mask)
            raw[key] = raw.get(key, 0j) + complex(coeff)
        self.n_qubits = n_qubits
        self.hermitian_hint = hermitian_hint
        self._terms = _canonical_terms(raw, hermitian_hint, tol)

    @classmethod
    def _from_raw(
        cls,
        n_qubits: int,
        raw: Dict[MaskPair, complex],
        hermitian_hint: bool = False,
        tol: float = DEFAULT_TOLERANCE,
    ) -> "PauliSum":
        instance = cls.__new__(cls)
        instance.n_qubits = n_qubits
        instance.hermitian_hint = hermitian_hint
        instance._terms = _canonical_terms(raw, hermitian_hint, tol)
        return instance

    # --- Constructors ---
    @classmethod
    def empty(cls, n_qubits: int) -> "PauliSum":
        return cls._from_raw(n_qubits, {})

    @classmethod
    def identity(cls, n_qubits: int, coeff: Number = 1.0) -> "PauliSum":
        return cls._from_raw(n_qubits, {(0, 0): complex(coeff)})

    @classmethod
    def from_terms(
        cls,
        n_qubits: int,
        terms: Iterable[Tuple[Number, PauliString]],
        hermitian_hint: bool = False,
        tol: float = DEFAULT_TOLERANCE,
    ) -> "PauliSum":
        raw: Dict[MaskPair, complex] = {}
        for coeff, string in terms:
            _check_dimensions(n_qubits, string.n_qubits)
            key = (string.x_mask, string.z_mask)
            raw[key] = raw.get(key, 0j) + complex(coeff)
        return cls._from_raw(n_qubits, raw, hermitian_hint, tol)

    @classmethod
    def from_dict(
        cls, labels: Mapping[str, Number], hermitian_hint: bool = False
    ) -> "PauliSum":
        """Build a sum from ``{"XX": 0.5, "YY": 0.25j}``; needs at least one label."""
        if not labels:
            raise ValueError("Cannot infer the qubit count from an empty label map")
        strings = [(coeff, PauliString.from_label(label)) for label, coeff in labels.items()]
        n_qubits = strings[0][1].n_qubits
        return cls.from_terms(n_qubits, strings, hermitian_hint)

    # --- Views ---
    @property
    def terms(self) -> Dict[PauliString, complex]:
        return {
            PauliString(self.n_qubits, x, z): coeff for (x, z), coeff in self._terms.items()
        }

    def items(self) -> Iterator[Tuple[PauliString, complex]]:
        for (x, z), coeff in self._terms.items():
            yield PauliString(self.n_qubits, x, z), coeff

    def raw_items(self) -> Iterator[Tuple[MaskPair, complex]]:
        return iter(self._terms.items())

    def coefficient(self, string: Union[PauliString, str]) -> complex:
        if isinstance(string, str):
            string = PauliString.from_label(string)
        _check_dimensions(self.n_qubits, string.n_qubits)
        return self._terms.get((string.x_mask, string.z_mask), 0j)

    def to_dict(self) -> Dict[str, complex]:
        return {string.to_label(): coeff for string, coeff in self.items()}

    def __len__(self) -> int:
        return len(self._terms)

    def __iter__(self) -> Iterator[Tuple[PauliString, complex]]:
        return self.items()

    def __bool__(self) -> bool:
        return bool(self._terms)

    def __repr__(self) -> str:
        body = ", ".join(f"{label}: {coeff:g}" for label, coeff in self.to_dict().items())
        return f"PauliSum(n_qubits={self.n_qubits}, {{{body}}})"

    @property
    def is_real(self) -> bool:
        return all(coeff.imag == 0.0 for coeff in self._terms.values())

    def coefficient_l1(self) -> float:
        return sum(abs(coeff) for coeff in self._terms.values())

    def max_weight(self) -> int:
        return max(((x | z).bit_count() for x, z in self._terms), default=0)

    def allclose(self, other: "PauliSum", atol: float = 1e-12) -> bool:
        _check_dimensions(self.n_qubits, other.n_qubits)
        keys = set(self._terms) | set(other._terms)
        return all(
            abs(self._terms.get(key, 0j) - other._terms.get(key, 0j)) <= atol for key in keys
        )

    # --- Arithmetic ---
    def scale(self, factor: Number) -> "PauliSum":
        factor = complex(factor)
        return PauliSum._from_raw(
            self.n_qubits, {key: coeff * factor for key, coeff in self._terms.items()}
        )

    def adjoint(self) -> "PauliSum":
        return PauliSum._from_raw(
            self.n_qubits,
            {key: coeff.conjugate() for key, coeff in self._terms.items()},
            self.hermitian_hint,
        )

    def real_part(self) -> "PauliSum":
        """Sum of the real parts of the coefficients (a Hermitian operator)."""
        return PauliSum._from_raw(
            self.n_qubits,
            {key: complex(coeff.real) for key, coeff in self._terms.items()},
            hermitian_hint=True,
        )

    def imag_part(self) -> "PauliSum":
        return PauliSum._from_raw(
            self.n_qubits,
            {key: complex(coeff.imag) for key, coeff in self._terms.items()},
            hermitian_hint=True,
        )

    def with_hint(self, hermitian_hint: bool, tol: float = DEFAULT_TOLERANCE) -> "PauliSum":
        return PauliSum._from_raw(self.n_qubits, dict(self._terms), hermitian_hint, tol)

    def __add__(self, other: "PauliSum") -> "PauliSum":
        _check_dimensions(self.n_qubits, other.n_qubits)
        raw = dict(self._terms)
        for key, coeff in other._terms.items():
            raw[key] = raw.get(key, 0j) + coeff
        return PauliSum._from_raw(self.n_qubits, raw)

    def __sub__(self, other: "PauliSum") -> "PauliSum":
        return self + other.scale(-1)

    def __neg__(self) -> "PauliSum":
        return self.scale(-1)

    def __mul__(self, other: Union["PauliSum", Number]) -> "PauliSum":
        if isinstance(other, PauliSum):
            return sum_multiply(self, other)
        return self.scale(other)

    def __rmul__(self, other: Number) -> "PauliSum":
        return self.scale(other)


def _canonical_terms(
    raw: Dict[MaskPair, complex], hermitian_hint: bool, tol: float
) -> Dict[MaskPair, complex]:
    if tol < 0:
        raise ValueError(f"Canonicalization tolerance must be non-negative, got {tol}")
    canonical: Dict[MaskPair, complex] = {}
    for key in sorted(raw):
        coeff = raw[key]
        if hermitian_hint:
            if abs(coeff.imag) > tol:
                x, z = key
                raise HermiticityError(
                    f"Coefficient {coeff} keeps an imaginary part above {tol:g} "
                    f"on string with masks x={x:#b}, z={z:#b}"
                )
            coeff = complex(coeff.real)
        if abs(coeff) < tol:
            continue
        canonical[key] = coeff
    return canonical


# --- Operations ---
def multiply(a: PauliString, b: PauliString) -> Tuple[Phase, PauliString]:
    """Return (phase, string) with a·b = i^phase.exponent · string."""
    _check_dimensions(a.n_qubits, b.n_qubits)
    exponent = _product_exponent(a.x_mask, a.z_mask, b.x_mask, b.z_mask)
    return Phase(exponent), PauliString(a.n_qubits, a.x_mask ^ b.x_mask, a.z_mask ^ b.z_mask)


def commutator(a: PauliString, b: PauliString) -> PauliSum:
    """[a, b] = ab - ba: empty if the strings commute, else 2·i^p·(ab-string)."""
    _check_dimensions(a.n_qubits, b.n_qubits)
    if a.commutes_with(b):
        return PauliSum.empty(a.n_qubits)
    phase, string = multiply(a, b)
    return PauliSum._from_raw(a.n_qubits, {(string.x_mask, string.z_mask): 2 * phase.value})


def weight(p: PauliString) -> int:
    return p.weight


def sum_add_term(
    s: PauliSum, c: Number, p: PauliString, tol: float = DEFAULT_TOLERANCE
) -> PauliSum:
    _check_dimensions(s.n_qubits, p.n_qubits)
    raw = dict(s._terms)
    key = (p.x_mask, p.z_mask)
    raw[key] = raw.get(key, 0j) + complex(c)
    return PauliSum._from_raw(s.n_qubits, raw, tol=tol)


def sum_multiply(s1: PauliSum, s2: PauliSum, tol: float = DEFAULT_TOLERANCE) -> PauliSum:
    """Distribute s1·s2 with phase tracking and merge equal strings."""
    _check_dimensions(s1.n_qubits, s2.n_qubits)
    right = [(x2, z2, (x2 & z2).bit_count(), c2) for (x2, z2), c2 in s2._terms.items()]
    acc: Dict[MaskPair, complex] = {}
    for (x1, z1), c1 in s1._terms.items():
        own = (x1 & z1).bit_count()
        for x2, z2, own2, c2 in right:
            x3 = x1 ^ x2
            z3 = z1 ^ z2
            exponent = (own + own2 + 2 * (z1 & x2).bit_count() - (x3 & z3).bit_count()) & 3
            key = (x3, z3)
            acc[key] = acc.get(key, 0j) + _PHASE_VALUES[exponent] * c1 * c2
    return PauliSum._from_raw(s1.n_qubits, acc, tol=tol)


def sum_commutator(s1: PauliSum, s2: PauliSum, tol: float = DEFAULT_TOLERANCE) -> PauliSum:
    """[s1, s2] built termwise from non-vanishing string commutators only."""
    _check_dimensions(s1.n_qubits, s2.n_qubits)
    acc: Dict[MaskPair, complex] = {}
    for (x1, z1), c1 in s1._terms.items():
        for (x2, z2), c2 in s2._terms.items():
            if ((x1 & z2).bit_count() + (z1 & x2).bit_count()) & 1 == 0:
                continue
            key = (x1 ^ x2, z1 ^ z2)
            exponent = _product_exponent(x1, z1, x2, z2)
            acc[key] = acc.get(key, 0j) + 2 * _PHASE_VALUES[exponent] * c1 * c2
    return PauliSum._from_raw(s1.n_qubits, acc, tol=tol)


def identity_coefficient(s: PauliSum) -> complex:
    """Coefficient of the identity; the trace of ``s`` is 2^n times this."""
    return s._terms.get((0, 0), 0j)


def canonicalize(s: PauliSum, tol: float = DEFAULT_TOLERANCE) -> PauliSum:
    return PauliSum._from_raw(s.n_qubits, dict(s._terms), s.hermitian_hint, tol)
