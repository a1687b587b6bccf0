"""Closed-form bounds: examples, edge cases and monotonicity."""

import math

import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from bounds import (
    SATURATION_SENTINEL,
    compute_bound_report,
    conjugation_error_bound,
    direct_expansion_tail_bound,
    gamma_l1_bound,
    hoeffding_radius,
    hoeffding_shots,
    propagator_tail_bound,
    segmented_propagator_error,
    segmented_systematic_bound,
    shadow_radius,
    shadow_shots,
    term_count_bound,
)

lambdas = st.floats(0.0, 3.0, allow_nan=False)
orders = st.integers(0, 20)
epsilons = st.floats(1e-4, 0.5, allow_nan=False)
deltas = st.floats(1e-3, 0.5, allow_nan=False)


@pytest.mark.parametrize(
    "Lambda, K, expected",
    [(1.0, 6, 1 / 5040), (0.5, 2, 0.125 / 6), (0.0, 4, 0.0), (0.0, 0, 0.0)],
)
def test_propagator_tail_examples(Lambda, K, expected):
    assert propagator_tail_bound(Lambda, K) == pytest.approx(expected, rel=1e-12)


def test_imaginary_picks_up_exponential():
    assert propagator_tail_bound(0.5, 2, imaginary=True) == pytest.approx(0.125 / 6 * math.exp(0.5))


def test_tail_rejects_negative_lambda():
    with pytest.raises(ValueError):
        propagator_tail_bound(-0.1, 2)


@pytest.mark.parametrize("eps_u, norm_o, expected", [(0.01, 1, 0.0201), (0.0, 5, 0.0), (0.1, 2, 0.42)])
def test_conjugation_examples(eps_u, norm_o, expected):
    assert conjugation_error_bound(eps_u, norm_o) == pytest.approx(expected)


def test_conjugation_with_non_unitary_propagator():
    assert conjugation_error_bound(0.1, 1.0, norm_u=2.0) == pytest.approx(0.41)


def test_direct_examples():
    assert direct_expansion_tail_bound(0.5, 2, 1.0) == pytest.approx(1 / 6)
    assert direct_expansion_tail_bound(0.0, 3, 7.0) == 0.0


@pytest.mark.parametrize("Lambda, K", [(0.3, 1), (0.7, 3), (1.0, 6)])
def test_direct_ratio(Lambda, K):
    ratio = direct_expansion_tail_bound(Lambda, K, 1.0) / (3 * propagator_tail_bound(Lambda, K))
    assert ratio == pytest.approx(2 ** (K + 1) / 3)


@pytest.mark.parametrize(
    "L, K, r, conjugated, expected",
    [(3, 2, 1, False, 13), (3, 2, 1, True, 169), (7, 0, 1, False, 1), (1, 3, 2, False, 16), (3, 1, 2, False, 16)],
)
def test_term_count_examples(L, K, r, conjugated, expected):
    assert term_count_bound(L, K, r, conjugated) == expected


def test_term_count_scales_with_observable():
    assert term_count_bound(3, 2, 1, True, observable_terms=4) == 4 * 169


def test_term_count_saturates():
    assert term_count_bound(100, 40, 10, True) == SATURATION_SENTINEL


def test_term_count_rejects_empty_hamiltonian():
    with pytest.raises(ValueError):
        term_count_bound(0, 2, 1, False)


def test_gamma_examples():
    assert gamma_l1_bound(1.0, 0.1, 2, 1) == pytest.approx(1.221025)
    assert gamma_l1_bound(2.5, 0.0, 4, 3) == 1.0
    assert gamma_l1_bound(1.0, 0.1, None, 1) == pytest.approx(math.exp(0.2))
    assert gamma_l1_bound(1.0, 0.1, 2, 1, observable_l1=4.0) == pytest.approx(4 * 1.221025)
    assert gamma_l1_bound(1.0, 0.1, 2, 1, conjugated=False) == pytest.approx(1.105)


@pytest.mark.parametrize("gamma, expected", [(1.0, 738), (2.0, 2952), (0.0, 0), (1.19, 1045)])
def test_hoeffding_examples(gamma, expected):
    assert hoeffding_shots(gamma, 0.1, 0.05) == expected


@pytest.mark.parametrize("eps, delta", [(0.0, 0.05), (0.1, 0.0), (0.1, 1.0)])
def test_hoeffding_argument_checks(eps, delta):
    with pytest.raises(ValueError):
        hoeffding_shots(1.0, eps, delta)


def test_hoeffding_radius_inverts_shots():
    N = hoeffding_shots(1.0, 0.1, 0.05)
    assert hoeffding_radius(1.0, N, 0.05) <= 0.1
    assert hoeffding_radius(1.0, N - 1, 0.05) > 0.1


@pytest.mark.parametrize("w, m, expected", [(2, 13, 13319), (0, 1, 910)])
def test_shadow_examples(w, m, expected):
    assert shadow_shots(w, m, 0.1, 0.05) == expected


def test_shadow_diverges_near_one():
    with pytest.raises(ValueError):
        shadow_shots(2, 13, 1 - 1e-12, 0.05)


def test_shadow_radius_inverts_shots():
    N = shadow_shots(2, 13, 0.1, 0.05)
    radius = shadow_radius(2, 13, N, 0.05)
    assert radius == pytest.approx(0.1, rel=1e-3)
    assert radius <= 0.1


def test_shadow_radius_below_invertible_range():
    assert shadow_radius(4, 100, 10, 0.05) is None


def test_report_concat_total():
    report = compute_bound_report("concat", 6.0, 0.1, 6, 1, 1e-3, 0.05, 4.0, 6, 100, 3.0, 2)
    tail = propagator_tail_bound(0.6, 6)
    assert report.propagator_tail == pytest.approx(tail)
    assert report.total_systematic == pytest.approx(conjugation_error_bound(tail, 4.0))
    assert report.shots_hoeffding == hoeffding_shots(3.0, 1e-3, 0.05)
    assert report.to_dict()["mode"] == "concat"


def test_report_real_time_segments_sum_tails():
    report = compute_bound_report("concat", 2.0, 1.0, 4, 2, 1e-3, 0.05, 1.0, 2, 10, 2.0, 1)
    assert report.Lambda == pytest.approx(1.0)
    assert report.total_systematic == pytest.approx(conjugation_error_bound(2 * propagator_tail_bound(1.0, 4), 1.0))


def test_real_time_segment_errors_add():
    assert segmented_propagator_error(1.0, 4, 3) == pytest.approx(3 * propagator_tail_bound(1.0, 4))


def test_single_imaginary_segment_is_its_tail():
    assert segmented_propagator_error(0.75, 2, 1, imaginary=True) == pytest.approx(
        propagator_tail_bound(0.75, 2, imaginary=True)
    )


def test_imaginary_segment_errors_compound():
    tail = propagator_tail_bound(0.75, 2, imaginary=True)
    error = segmented_propagator_error(0.75, 2, 2, imaginary=True)
    assert error == pytest.approx(2 * tail * (math.exp(0.75) + tail))
    assert error >= (math.exp(0.75) + tail) ** 2 - math.exp(1.5)
    # ||U~ - U|| for H = X, tau = 1.5, K = 2, r = 2
    assert error > 0.3557 > 2 * tail


def test_imaginary_segment_error_saturates_to_infinity():
    assert math.isinf(segmented_propagator_error(400.0, 2, 3, imaginary=True))


def test_systematic_bound_conjugates_with_propagator_norm():
    error = segmented_propagator_error(0.75, 2, 2, imaginary=True)
    expected = conjugation_error_bound(error, 2.0, math.exp(1.5))
    assert segmented_systematic_bound(0.75, 2, 2, 2.0, True, imaginary=True) == pytest.approx(expected)
    assert segmented_systematic_bound(0.75, 2, 2, 2.0, False, imaginary=True) == pytest.approx(error)
    assert segmented_systematic_bound(0.75, 2, 2, 0.0, True, imaginary=True) == 0.0


def test_report_imaginary_segments_compound():
    report = compute_bound_report(
        "propagator-only", 1.0, 1.5, 2, 2, 1e-3, 0.05, 1.0, 1, 3, 1.0, 1, imaginary=True
    )
    assert report.Lambda == pytest.approx(0.75)
    assert report.total_systematic == pytest.approx(segmented_propagator_error(0.75, 2, 2, imaginary=True))
    assert report.total_systematic > 2 * report.propagator_tail


def test_report_direct_and_propagator_only():
    direct = compute_bound_report("direct", 1.0, 0.5, 2, 1, 1e-3, 0.05, 1.0, 1, 3, 1.2, 1)
    assert direct.total_systematic == pytest.approx(1 / 6)
    only = compute_bound_report("propagator-only", 1.0, 0.5, 2, 1, 1e-3, 0.05, 1.0, 1, 2, 1.1, 1)
    assert only.total_systematic == pytest.approx(only.propagator_tail)


def test_report_uses_tighter_norm_bound():
    loose = compute_bound_report("concat", 3.0, 0.2, 3, 1, 1e-3, 0.05, 1.0, 3, 10, 1.0, 1)
    tight = compute_bound_report("concat", 3.0, 0.2, 3, 1, 1e-3, 0.05, 1.0, 3, 10, 1.0, 1, norm_h=2.0)
    assert tight.total_systematic < loose.total_systematic


def test_report_rejects_unknown_mode():
    with pytest.raises(ValueError):
        compute_bound_report("trotter", 1.0, 0.1, 2, 1, 1e-3, 0.05, 1.0, 1, 1, 1.0, 0)


def test_report_entries_nonnegative():
    report = compute_bound_report("commutator", 1.5, 0.3, 3, 1, 1e-2, 0.1, 2.0, 3, 20, 2.5, 2)
    for value in report.to_dict().values():
        if isinstance(value, (int, float)):
            assert value >= 0


@settings(max_examples=200, deadline=None)
@given(lambdas, lambdas, orders)
def test_tail_monotone_in_lambda(a, b, K):
    low, high = sorted((a, b))
    assert propagator_tail_bound(low, K) <= propagator_tail_bound(high, K)
    assert direct_expansion_tail_bound(low, K, 1.0) <= direct_expansion_tail_bound(high, K, 1.0)


@settings(max_examples=200, deadline=None)
@given(st.floats(0.0, 1.0, allow_nan=False), orders)
def test_tail_nonincreasing_in_order_when_lambda_small(Lambda, K):
    assert propagator_tail_bound(Lambda, K + 1) <= propagator_tail_bound(Lambda, K)


@settings(max_examples=200, deadline=None)
@given(st.floats(0.0, 10.0, allow_nan=False), st.floats(0.0, 10.0, allow_nan=False), epsilons, deltas)
def test_hoeffding_monotone(g1, g2, eps, delta):
    low, high = sorted((g1, g2))
    assert hoeffding_shots(low, eps, delta) <= hoeffding_shots(high, eps, delta)
    assert hoeffding_shots(high, eps * 2, delta) <= hoeffding_shots(high, eps, delta)
    assert hoeffding_shots(high, eps, min(delta * 2, 0.99)) <= hoeffding_shots(high, eps, delta)


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 8), st.integers(1, 1000), epsilons, deltas)
def test_shadow_monotone(w, m, eps, delta):
    base = shadow_shots(w, m, eps, delta)
    assert shadow_shots(w + 1, m, eps, delta) >= base
    assert shadow_shots(w, m + 1, eps, delta) >= base
    assert shadow_shots(w, m, eps, min(delta * 2, 0.99)) <= base


@settings(max_examples=200, deadline=None)
@given(st.floats(0.0, 3.0, allow_nan=False), st.floats(0.0, 1.0, allow_nan=False), orders, st.integers(1, 4))
def test_gamma_bound_monotone_and_below_exponential(lam, t, K, r):
    bound = gamma_l1_bound(lam, t, K, r)
    assert bound <= gamma_l1_bound(lam, t, K + 1, r) * (1 + 1e-12)
    assert bound <= math.exp(2 * lam * t) * (1 + 1e-12)
    assert bound >= 1.0


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 6), st.integers(0, 6), st.integers(1, 3))
def test_term_count_monotone(L, K, r):
    assert term_count_bound(L, K, r, False) <= term_count_bound(L + 1, K, r, False)
    assert term_count_bound(L, K, r, False) <= term_count_bound(L, K + 1, r, False)
    assert term_count_bound(L, K, r, False) <= term_count_bound(L, K, r, True)


@settings(max_examples=100, deadline=None)
@given(st.floats(0.01, 0.6, allow_nan=False), st.floats(0.01, 0.6, allow_nan=False))
def test_shadow_shots_decrease_in_eps(e1, e2):
    assume(abs(e1 - e2) > 1e-6)
    low, high = sorted((e1, e2))
    assert shadow_shots(2, 10, high, 0.05) <= shadow_shots(2, 10, low, 0.05)
