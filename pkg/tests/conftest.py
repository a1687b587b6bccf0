"""Shared fixtures: seeded random models and small dense helpers."""

import numpy as np
import pytest

from model_io import HamiltonianSpec
from pauli_algebra import PauliString, PauliSum

LETTERS = "IXYZ"


def random_label(rng: np.random.Generator, n_qubits: int, allow_identity: bool = True) -> str:
    while True:
        label = "".join(rng.choice(list(LETTERS), size=n_qubits))
        if allow_identity or set(label) != {"I"}:
            return label


def make_random_hamiltonian(
    rng: np.random.Generator, n_qubits: int, n_terms: int, scale: float = 1.0
) -> HamiltonianSpec:
    labels = set()
    while len(labels) < n_terms:
        labels.add(random_label(rng, n_qubits, allow_identity=False))
    terms = []
    for label in sorted(labels):
        alpha = 0.0
        while abs(alpha) < 1e-3:
            alpha = float(rng.uniform(-scale, scale))
        terms.append((alpha, PauliString.from_label(label)))
    return HamiltonianSpec(n_qubits, tuple(terms))


def make_random_sum(
    rng: np.random.Generator, n_qubits: int, n_terms: int, real: bool = False
) -> PauliSum:
    terms = []
    for _ in range(n_terms):
        coeff = complex(rng.normal(), 0.0 if real else rng.normal())
        terms.append((coeff, PauliString.from_label(random_label(rng, n_qubits))))
    return PauliSum.from_terms(n_qubits, terms)


def operator_norm(matrix: np.ndarray) -> float:
    return float(np.linalg.norm(matrix, ord=2))


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240611)


@pytest.fixture
def random_hamiltonian(rng):
    def factory(n_qubits: int = 3, n_terms: int = 4, scale: float = 1.0) -> HamiltonianSpec:
        return make_random_hamiltonian(rng, n_qubits, n_terms, scale)

    return factory


@pytest.fixture
def random_sum(rng):
    def factory(n_qubits: int = 3, n_terms: int = 5, real: bool = False) -> PauliSum:
        return make_random_sum(rng, n_qubits, n_terms, real)

    return factory
