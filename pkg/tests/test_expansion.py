"""Truncated propagator and Heisenberg-picture expansions against dense dynamics."""

import math

import numpy as np
import pytest

from bounds import (
    compute_bound_report,
    conjugation_error_bound,
    direct_expansion_tail_bound,
    gamma_l1_bound,
    propagator_tail_bound,
    term_count_bound,
)
from conftest import make_random_hamiltonian, operator_norm, random_label
from expansion import (
    ExpansionStats,
    SequenceStage,
    TermCountExceededError,
    TimeParameter,
    TruncationOrderError,
    conjugate_expansion,
    conjugate_sequence,
    expand_propagator,
    expansion_stats,
    heisenberg_commutator_series,
    heisenberg_direct_expansion,
    heisenberg_taylor_concat,
    lambert_w_order_estimate,
    propagator_order_terms,
    select_truncation_order,
)
from model_io import HamiltonianSpec, ObservableSpec, build_heisenberg_chain
from pauli_algebra import PauliString, PauliSum, identity_coefficient
from reference_backend import exact_propagator, sum_to_matrix

H_X = HamiltonianSpec(1, ((1.0, PauliString.from_label("X")),))
O_Z = ObservableSpec.from_label("Z")


def real(t: float) -> TimeParameter:
    return TimeParameter.real(t)


def test_time_parameter_generators():
    assert real(0.1).generator_coefficient == -0.1j
    assert TimeParameter.imaginary(0.1).generator_coefficient == -0.1


def test_time_parameter_rejects_negative_and_unknown_kind():
    with pytest.raises(ValueError):
        real(-0.1)
    with pytest.raises(ValueError):
        TimeParameter(0.1, "complex")


def test_time_parameter_divided():
    assert real(0.3).divided(3).value == pytest.approx(0.1)


@pytest.mark.parametrize("Lambda, eps, K", [(1.0, 1e-3, 6), (1.0, 0.5, 1), (0.0, 1e-9, 0), (0.9, 1e-3 / 3, 6)])
def test_select_order_examples(Lambda, eps, K):
    assert select_truncation_order(Lambda, eps) == K


def test_select_order_cap():
    with pytest.raises(TruncationOrderError):
        select_truncation_order(50.0, 1e-12, max_order=10)


@pytest.mark.parametrize("Lambda", [0.1, 0.5, 1.0, 2.0])
@pytest.mark.parametrize("eps", [1e-2, 1e-4, 1e-8])
def test_lambert_estimate_bounds_the_scan(Lambda, eps):
    estimate = lambert_w_order_estimate(Lambda, eps)
    scanned = select_truncation_order(Lambda, eps)
    assert scanned <= math.ceil(estimate)
    assert estimate >= scanned - 1


def test_lambert_domain():
    with pytest.raises(ValueError):
        lambert_w_order_estimate(1.0, 0.5)


def test_real_time_second_order():
    u = expand_propagator(H_X, real(0.1), 2)
    assert u.to_dict() == pytest.approx({"I": 0.995, "X": -0.1j})


def test_propagator_order_zero(random_hamiltonian):
    h = random_hamiltonian(3, 4)
    assert expand_propagator(h, real(0.7), 0).to_dict() == {"III": 1}


def test_imaginary_first_order():
    u = expand_propagator(H_X, TimeParameter.imaginary(0.1), 1)
    assert u.to_dict() == pytest.approx({"I": 1.0, "X": -0.1})


def test_imaginary_trace():
    u = expand_propagator(H_X, TimeParameter.imaginary(0.2), 2)
    assert identity_coefficient(u).real == pytest.approx(1.02)
    assert 2 * identity_coefficient(u).real == pytest.approx(2 * math.cosh(0.2), abs=2e-4)


def test_order_terms_sum_to_propagator(random_hamiltonian):
    h = random_hamiltonian(2, 3)
    orders = propagator_order_terms(h, real(0.3), 3)
    total = PauliSum.empty(2)
    for term in orders:
        total = total + term
    assert len(orders) == 4
    assert total.allclose(expand_propagator(h, real(0.3), 3))


def test_gamma_l1_below_truncated_exponential(rng):
    for _ in range(20):
        h = make_random_hamiltonian(rng, 3, int(rng.integers(1, 6)))
        t = float(rng.uniform(0.05, 0.5))
        u = expand_propagator(h, real(t), 3)
        assert u.coefficient_l1() <= gamma_l1_bound(h.lam, t, 3, 1, conjugated=False) + 1e-12


def test_heisenberg_pair_second_order_strings():
    h = build_heisenberg_chain(2, 1.0)
    result = heisenberg_taylor_concat(
        h, PauliSum.identity(2), real(0.1), 2, 1, mode="propagator-only"
    )
    assert set(result.sum.to_dict()) == {"II", "XX", "YY", "ZZ"}
    assert result.stats.m_tot == 4


def test_propagator_term_cap():
    h = build_heisenberg_chain(4, 1.0)
    with pytest.raises(TermCountExceededError) as info:
        expand_propagator(h, real(0.1), 4, max_terms=10)
    assert info.value.cap == 10
    assert info.value.predicted_bound >= info.value.count


FIRST_ORDER_ROTATION = PauliSum.from_dict({"I": 1, "X": -0.1j})


def test_conjugate_first_order_rotation():
    result = conjugate_expansion(FIRST_ORDER_ROTATION, O_Z)
    assert result.to_dict() == pytest.approx({"Z": 0.99, "Y": 0.2})
    assert result.hermitian_hint


def test_conjugate_identity_propagator():
    assert conjugate_expansion(PauliSum.identity(1), O_Z).allclose(O_Z.observable)


def test_conjugate_norm_growth():
    assert conjugate_expansion(FIRST_ORDER_ROTATION, PauliSum.identity(1)).to_dict() == pytest.approx({"I": 1.01})


def test_concat_example():
    result = heisenberg_taylor_concat(H_X, O_Z, real(0.1), 1, 1)
    assert result.sum.to_dict() == pytest.approx({"Z": 0.99, "Y": 0.2})
    assert (result.stats.m_tot, result.stats.w_max) == (2, 1)
    assert result.stats.gamma_l1 == pytest.approx(1.19)
    assert (result.K, result.r, result.mode) == (1, 1, "concat")


@pytest.mark.parametrize("K, expected", [(1, {"Z": 1.0, "Y": 0.2}), (2, {"Z": 0.98, "Y": 0.2})])
def test_commutator_examples(K, expected):
    assert heisenberg_commutator_series(H_X, O_Z, real(0.1), K).sum.to_dict() == pytest.approx(expected)


def test_direct_example():
    result = heisenberg_direct_expansion(H_X, O_Z, real(0.1), 1)
    assert result.sum.to_dict() == pytest.approx({"Z": 1.0, "Y": 0.2})


def test_direct_matches_commutator_at_second_order():
    direct = heisenberg_direct_expansion(H_X, O_Z, real(0.1), 2).sum
    nested = heisenberg_commutator_series(H_X, O_Z, real(0.1), 2).sum
    assert direct.allclose(nested, atol=1e-12)


@pytest.mark.parametrize("mode", ["concat", "direct", "commutator"])
def test_zero_time_and_order_return_observable(mode, random_hamiltonian):
    h = random_hamiltonian(2, 3)
    obs = ObservableSpec.from_sum(PauliSum.from_dict({"XZ": 0.5, "IY": -1.0}))
    if mode == "concat":
        at_zero = heisenberg_taylor_concat(h, obs, real(0.0), 3, 2).sum
    elif mode == "direct":
        at_zero = heisenberg_direct_expansion(h, obs, real(0.0), 3).sum
    else:
        at_zero = heisenberg_commutator_series(h, obs, real(0.0), 3).sum
    assert at_zero.allclose(obs.observable, atol=0.0)
    assert heisenberg_direct_expansion(h, obs, real(0.4), 0).sum.allclose(obs.observable)
    assert heisenberg_commutator_series(h, obs, real(0.4), 0).sum.allclose(obs.observable)


def test_order_by_order_equivalence(rng):
    for _ in range(50):
        n = int(rng.integers(1, 4))
        max_terms = min(5, 4**n - 1)
        h = make_random_hamiltonian(rng, n, int(rng.integers(1, max_terms + 1)))
        obs = ObservableSpec.from_label(random_label(rng, n, allow_identity=False))
        t = real(float(rng.uniform(0.05, 0.5)))
        K = int(rng.integers(0, 5))
        concat = heisenberg_taylor_concat(h, obs, t, K, 1, truncate_total_order=K).sum
        direct = heisenberg_direct_expansion(h, obs, t, K).sum
        nested = heisenberg_commutator_series(h, obs, t, K).sum
        assert concat.allclose(direct, atol=1e-10)
        assert direct.allclose(nested, atol=1e-10)


def test_heisenberg_outputs_are_real(random_hamiltonian):
    h = random_hamiltonian(3, 5)
    obs = ObservableSpec.from_label("ZIX")
    for result in (
        heisenberg_taylor_concat(h, obs, real(0.2), 3, 2),
        heisenberg_direct_expansion(h, obs, real(0.2), 3),
        heisenberg_commutator_series(h, obs, real(0.2), 3),
    ):
        assert result.sum.is_real


def test_total_order_truncation_needs_single_segment():
    with pytest.raises(ValueError):
        heisenberg_taylor_concat(H_X, O_Z, real(0.1), 2, 2, truncate_total_order=2)


def test_heisenberg_dimension_mismatch():
    with pytest.raises(ValueError):
        heisenberg_taylor_concat(H_X, ObservableSpec.from_label("ZZ"), real(0.1), 1)


def test_imaginary_commutator_series_is_similarity_transform():
    tau = 0.1
    result = heisenberg_commutator_series(H_X, O_Z, TimeParameter.imaginary(tau), 12)
    z = sum_to_matrix(O_Z.observable)
    forward = exact_propagator(H_X, TimeParameter.imaginary(tau))
    backward = np.linalg.inv(forward)
    np.testing.assert_allclose(sum_to_matrix(result.sum), backward @ z @ forward, atol=1e-10)
    assert not result.sum.hermitian_hint


def test_concat_single_qubit_rotation():
    result = heisenberg_taylor_concat(H_X, O_Z, real(0.1), 8, 1)
    assert result.sum.to_dict() == pytest.approx({"Z": math.cos(0.2), "Y": math.sin(0.2)}, abs=1e-12)


def test_bounds_hold_on_random_instances(rng):
    for _ in range(50):
        n = int(rng.integers(1, 4))
        h = make_random_hamiltonian(rng, n, int(rng.integers(1, min(5, 4**n - 1) + 1)), scale=0.5)
        obs = ObservableSpec.from_label(random_label(rng, n, allow_identity=False))
        t = float(rng.uniform(0.05, 1.0)) / h.lam
        K = int(rng.integers(0, 5))
        Lambda = h.lam * t

        exact_u = exact_propagator(h, real(t))
        approx_u = sum_to_matrix(expand_propagator(h, real(t), K))
        eps_u = operator_norm(exact_u - approx_u)
        assert eps_u <= propagator_tail_bound(Lambda, K) + 1e-12

        o = sum_to_matrix(obs.observable)
        exact_o = exact_u.conj().T @ o @ exact_u
        concat = sum_to_matrix(heisenberg_taylor_concat(h, obs, real(t), K, 1).sum)
        assert operator_norm(exact_o - concat) <= conjugation_error_bound(eps_u, obs.norm_bound) + 1e-12

        direct = sum_to_matrix(heisenberg_direct_expansion(h, obs, real(t), K).sum)
        assert operator_norm(exact_o - direct) <= direct_expansion_tail_bound(Lambda, K, obs.norm_bound) + 1e-12


def test_segmented_concat_within_reported_bound():
    h = build_heisenberg_chain(3, 1.0)
    obs = ObservableSpec.from_label("ZII")
    t = 0.25
    result = heisenberg_taylor_concat(h, obs, real(t), 3, 2)
    report = compute_bound_report(
        "concat", h.lam, t, 3, 2, 1e-3, 0.05, obs.norm_bound, h.L,
        result.stats.m_tot, result.stats.gamma_l1, result.stats.w_max,
    )
    exact_u = exact_propagator(h, real(t))
    exact_o = exact_u.conj().T @ sum_to_matrix(obs.observable) @ exact_u
    assert operator_norm(exact_o - sum_to_matrix(result.sum)) <= report.total_systematic
    assert result.stats.m_tot <= term_count_bound(h.L, 3, 2, True)
    assert result.stats.gamma_l1 <= gamma_l1_bound(h.lam, t, 3, 2) + 1e-12


def test_single_stage_matches_concat(random_hamiltonian):
    h = random_hamiltonian(2, 3)
    obs = ObservableSpec.from_label("ZX")
    single = conjugate_sequence([SequenceStage(h, real(0.2), 3)], obs).sum
    assert single.allclose(heisenberg_taylor_concat(h, obs, real(0.2), 3).sum)


def test_two_stages_compose():
    staged = conjugate_sequence([(H_X, real(0.1), 3), (H_X, real(0.1), 3)], O_Z).sum
    assert staged.to_dict() == pytest.approx({"Z": math.cos(0.4), "Y": math.sin(0.4)}, abs=1e-4)


def test_last_stage_applied_first():
    h_z = HamiltonianSpec(1, ((1.0, PauliString.from_label("Z")),))
    obs = ObservableSpec.from_label("X")
    staged = conjugate_sequence([(H_X, real(0.2), 10), (h_z, real(0.3), 10)], obs).sum
    u = exact_propagator(h_z, real(0.3)) @ exact_propagator(H_X, real(0.2))
    expected = u.conj().T @ sum_to_matrix(obs.observable) @ u
    np.testing.assert_allclose(sum_to_matrix(staged), expected, atol=1e-10)


def test_conjugate_empty_sequence():
    assert conjugate_sequence([], O_Z).sum.allclose(O_Z.observable)


def test_conjugate_stage_dimension_mismatch():
    with pytest.raises(ValueError):
        conjugate_sequence([(build_heisenberg_chain(2, 1.0), real(0.1), 2)], O_Z)


def test_stats_example():
    stats = expansion_stats(PauliSum.from_dict({"Z": 0.99, "Y": 0.2}))
    assert (stats.m_tot, stats.w_max) == (2, 1)
    assert stats.gamma_l1 == pytest.approx(1.19)


def test_stats_empty_and_identity():
    assert expansion_stats(PauliSum.empty(2)) == ExpansionStats(0, 0.0, 0, 0j)
    stats = expansion_stats(PauliSum.identity(1))
    assert (stats.m_tot, stats.w_max, stats.identity_coeff) == (1, 0, 1)


def test_counts_below_a_priori_bounds(rng):
    for _ in range(15):
        h = make_random_hamiltonian(rng, 3, int(rng.integers(1, 5)))
        obs = ObservableSpec.from_label(random_label(rng, 3, allow_identity=False))
        t = float(rng.uniform(0.05, 0.4))
        K = int(rng.integers(1, 4))
        r = int(rng.integers(1, 3))
        stats = heisenberg_taylor_concat(h, obs, real(t), K, r).stats
        assert stats.m_tot <= term_count_bound(h.L, K, r, True)
        assert stats.gamma_l1 <= gamma_l1_bound(h.lam, t, K, r) + 1e-12
