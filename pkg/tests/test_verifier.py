import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import LN2, random_kernel
from mechanism import (
    FiniteKernel,
    FiniteQuery,
    LaplaceMechanism,
    PrivacyParams,
    output_perturbation,
    product_kernel,
    rr_kernel,
)
from metric_core import FiniteMetricSpace, discrete_metric_space
from utils import CapacityError, SpecError
from verifier import (
    VerificationReport,
    check_dp_1d_closed_form,
    check_dp_1d_exhaustive,
    check_dp_product_bruteforce,
    check_laplace_intervals,
    check_output_perturbation_dp,
    check_query_dp,
    decompose_rectangles,
    default_laplace_intervals,
    delta_slack_closed_form,
    event_gaps,
    privacy_profile,
    rectangle_union,
)


def test_event_gaps_indexes_by_bitmask():
    np.testing.assert_allclose(event_gaps(np.array([1.0, 2.0, 4.0])), np.arange(8))


class TestOneDimensional:
    def test_rr_p03_fails_with_singleton_witness(self, rr_p03):
        report = check_dp_1d_exhaustive(rr_p03, PrivacyParams(LN2, 0.0))
        assert not report.passed
        assert report.max_violation == pytest.approx(0.1)
        assert (report.witness.d, report.witness.d_prime) == ("a", "b")
        assert report.witness.event == [0]
        assert report.witness.lhs == pytest.approx(0.7)
        assert report.witness.rhs == pytest.approx(0.6)
        assert report.pairs_checked == 2
        assert report.events_checked == 8

    def test_rr_p02_passes(self, rr_p02):
        report = check_dp_1d_exhaustive(rr_p02, PrivacyParams(LN2, 0.0))
        assert report.passed
        assert report.witness is None
        assert report.events_checked == 12 * 16

    def test_delta_absorbs_violation(self, rr_p03):
        assert check_dp_1d_exhaustive(rr_p03, PrivacyParams(LN2, 0.1)).passed
        assert not check_dp_1d_exhaustive(rr_p03, PrivacyParams(LN2, 0.09)).passed

    def test_identical_rows_pass_at_zero(self, space4):
        kernel = rr_kernel(space4, 0.25, strict=False)
        assert check_dp_1d_exhaustive(kernel, PrivacyParams(0.0, 0.0)).passed

    def test_single_input_is_vacuously_private(self):
        inputs = FiniteMetricSpace(("x",), np.zeros((1, 1)))
        kernel = FiniteKernel(inputs, [[0.5, 0.5]], discrete_metric_space(["y", "z"]))
        report = check_dp_1d_exhaustive(kernel, PrivacyParams(0.0, 0.25))
        assert report.passed
        assert report.pairs_checked == 0
        assert report.max_violation == -0.25

    def test_capacity_guard(self):
        space = discrete_metric_space([f"u{i}" for i in range(25)])
        with pytest.raises(CapacityError) as excinfo:
            check_dp_1d_exhaustive(rr_kernel(space, 0.01), PrivacyParams(1.0))
        assert "delta_slack_closed_form" in str(excinfo.value)

    def test_threads_do_not_change_the_report(self, rng):
        kernel = random_kernel(rng, 5)
        params = PrivacyParams(0.5, 0.05)
        serial = check_dp_1d_exhaustive(kernel, params)
        parallel = check_dp_1d_exhaustive(kernel, params, threads=4)
        assert serial.to_dict() == parallel.to_dict()

    def test_closed_form_matches_exhaustive(self, rng):
        for _ in range(100):
            kernel = random_kernel(rng, int(rng.integers(2, 5)), int(rng.integers(2, 6)))
            params = PrivacyParams(float(rng.uniform(0, 2)), float(rng.choice([0.0, 0.05, 0.2])))
            exhaustive = check_dp_1d_exhaustive(kernel, params)
            closed = check_dp_1d_closed_form(kernel, params)
            assert exhaustive.passed == closed.passed
            assert closed.max_violation == pytest.approx(exhaustive.max_violation, abs=1e-12)

    def test_report_round_trip(self, rr_p03):
        report = check_dp_1d_exhaustive(rr_p03, PrivacyParams(LN2, 0.0))
        assert VerificationReport.from_dict(report.to_dict()) == report


class TestDeltaSlack:
    def test_rr_p03(self, rr_p03):
        assert delta_slack_closed_form(rr_p03, LN2) == pytest.approx(0.1)
        # at epsilon = 0 the slack is the total variation distance
        assert delta_slack_closed_form(rr_p03, 0.0) == pytest.approx(0.4)

    def test_large_epsilon(self, rr_p03):
        assert delta_slack_closed_form(rr_p03, 50.0) == 0.0

    def test_support_mismatch_needs_full_delta(self, space2):
        kernel = FiniteKernel(space2, [[1.0, 0.0], [0.0, 1.0]])
        assert delta_slack_closed_form(kernel, 10.0) == pytest.approx(1.0)

    def test_negative_epsilon(self, rr_p03):
        with pytest.raises(SpecError):
            delta_slack_closed_form(rr_p03, -1.0)

    def test_slack_is_a_sufficient_delta(self, rng):
        for _ in range(50):
            kernel = random_kernel(rng, 3)
            epsilon = float(rng.uniform(0, 1.5))
            slack = delta_slack_closed_form(kernel, epsilon)
            assert check_dp_1d_exhaustive(kernel, PrivacyParams(epsilon, slack)).passed

    def test_profile_is_non_increasing(self, rr_p03):
        profile = privacy_profile(rr_p03, np.linspace(0, 2, 21))
        assert list(profile.columns) == ["epsilon", "delta"]
        assert len(profile) == 21
        assert profile["delta"].is_monotonic_decreasing


class TestProduct:
    def test_counts_and_witness_shape(self, rr_p03):
        report = check_dp_product_bruteforce(product_kernel(rr_p03, 2), PrivacyParams(LN2, 0.0))
        assert not report.passed
        assert report.pairs_checked == 8
        assert report.events_checked == 8 * 16
        d, d_prime = report.witness.d, report.witness.d_prime
        assert sum(1 for a, b in zip(d, d_prime) if a != b) == 1
        assert report.max_violation == pytest.approx(0.1)

    def test_private_kernel_gives_private_product(self, rr_p03):
        assert check_dp_product_bruteforce(product_kernel(rr_p03, 2), PrivacyParams(math.log(7 / 3))).passed

    def test_capacity_guard_points_to_one_row_check(self, rr_p02):
        with pytest.raises(CapacityError, match="check_dp_1d_exhaustive"):
            check_dp_product_bruteforce(product_kernel(rr_p02, 3), PrivacyParams(1.0))


class TestQueryDp:
    def test_count_query_inherits_privacy(self, rr_p02):
        mech = product_kernel(rr_p02, 2)
        q = FiniteQuery.count(rr_p02.output_space, "a")
        assert check_query_dp(mech, q, PrivacyParams(LN2)).passed

    def test_constant_query_is_always_private(self, rr_p03):
        mech = product_kernel(rr_p03, 2)
        report = check_query_dp(mech, FiniteQuery.constant("same"), PrivacyParams(0.0, 0.0))
        assert report.passed

    def test_identity_query_on_leaky_kernel(self, rr_p03):
        mech = product_kernel(rr_p03, 2)
        assert not check_query_dp(mech, FiniteQuery.identity(rr_p03.output_space), PrivacyParams(LN2)).passed

    def test_many_responses_fall_back_to_closed_form(self, rr_p02):
        mech = product_kernel(rr_p02, 3)
        report = check_query_dp(mech, FiniteQuery.identity(rr_p02.output_space), PrivacyParams(LN2))
        assert report.passed
        assert report.events_checked == report.pairs_checked


class TestOutputPerturbation:
    def test_count_with_rr_response_kernel(self, space2):
        counts = discrete_metric_space(["0", "1", "2"])
        op = output_perturbation(FiniteQuery.count(space2, "a"), rr_kernel(counts, 0.2))
        assert check_output_perturbation_dp(op, space2, 2, PrivacyParams(math.log(3.0))).passed
        report = check_output_perturbation_dp(op, space2, 2, PrivacyParams(LN2))
        assert not report.passed
        assert report.max_violation == pytest.approx(0.2)


class TestLaplaceIntervals:
    def test_calibrated_scale_passes(self):
        params = PrivacyParams(1.0, 0.0)
        mech = LaplaceMechanism.calibrated(0.0, 2.0, params)
        report = check_laplace_intervals(mech, params)
        assert report.passed
        assert report.intervals_checked == 100
        assert report.max_ratio <= math.e + 1e-9

    def test_reduced_scale_fails(self):
        params = PrivacyParams(1.0, 0.0)
        calibrated = LaplaceMechanism.calibrated(0.0, 2.0, params)
        report = check_laplace_intervals(LaplaceMechanism(0.0, 2.0, 0.9 * calibrated.b), params)
        assert not report.passed
        assert report.max_ratio > math.e

    def test_approximate_calibration(self):
        params = PrivacyParams(0.5, 0.1)
        assert check_laplace_intervals(LaplaceMechanism.calibrated(-1.0, 1.0, params), params).passed

    def test_default_sweep_shape(self):
        intervals = default_laplace_intervals(LaplaceMechanism(0.0, 1.0, 1.0))
        assert len(intervals) == 100
        assert sum(1 for lo, _ in intervals if lo == -math.inf) == 20
        assert sum(1 for _, hi in intervals if hi == math.inf) == 20


rectangle_families = st.lists(
    st.tuples(st.frozensets(st.integers(0, 7), min_size=1), st.frozensets(st.integers(0, 7), min_size=1)),
    min_size=1, max_size=5)


class TestRectangles:
    def test_two_rectangles(self):
        decomposition = decompose_rectangles([({1, 2}, {"x", "y"}), ({3}, {"y", "z"})])
        assert decomposition.index_sets == [(1,), (2,), (1, 2)]
        assert decomposition.parts[2] == (frozenset({1, 2, 3}), frozenset({"y"}))

    def test_empty_side(self):
        with pytest.raises(SpecError, match="rectangle 2"):
            decompose_rectangles([({1}, {2}), (set(), {3})])

    def test_capacity(self):
        with pytest.raises(CapacityError):
            decompose_rectangles([({i}, {i}) for i in range(17)])

    @given(rectangle_families)
    @settings(max_examples=300, deadline=None)
    def test_union_preserved_and_b_parts_disjoint(self, pairs):
        decomposition = decompose_rectangles(pairs)
        assert decomposition.points() == rectangle_union(pairs)
        assert decomposition.b_parts_disjoint()
