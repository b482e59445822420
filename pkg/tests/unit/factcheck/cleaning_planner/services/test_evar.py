"""Unit tests for expected residual variance."""

from itertools import combinations

import numpy as np
import pytest

from apps.factcheck.cleaning_planner.models.claims import Direction
from apps.factcheck.cleaning_planner.models.distributions import (
    DiscreteDist,
    NormalSpec,
    Realization,
)
from apps.factcheck.cleaning_planner.models.query import LinearQuery, ThresholdIndicatorQuery
from apps.factcheck.cleaning_planner.services.evar import (
    EVarEvaluator,
    conditional_variance,
    curvature,
    evar,
    evar_bruteforce,
    evar_complement,
    evar_decomposed,
    evar_linear,
    evar_montecarlo,
    marginal_gain,
    marginal_gain_montecarlo,
    moments,
)
from apps.factcheck.cleaning_planner.utils.errors import (
    CurvatureUndefinedError,
    DependencyNotSupportedError,
    EnumerationCapError,
)
from tests.unit.conftest import make_dataset


def _pairs_dataset(pairs):
    dists = []
    for _ in range(pairs):
        dists.append(DiscreteDist.uniform([0.0, 0.5, 1.0, 1.5, 2.0]))
        dists.append(DiscreteDist.uniform([1 / 3, 1.0, 5 / 3]))
    return make_dataset(dists, current=[1.0] * (2 * pairs))


class TestConditionalVariance:
    """Tests for conditional_variance."""

    def test_uncertainty_increase(self, bernoulli_dataset, below_three_query):
        """Test that revealing X1 = 1 leaves a 1/12 toss-up."""
        value = conditional_variance(
            below_three_query, bernoulli_dataset, Realization({0: 1.0})
        )
        assert value == pytest.approx(11 / 144, abs=1e-12)

    def test_everything_assigned(self, bernoulli_dataset, below_three_query):
        """Test that a full assignment leaves no variance."""
        value = conditional_variance(
            below_three_query, bernoulli_dataset, Realization({0: 1.0, 1: 0.0, 2: 1.0})
        )
        assert value == 0.0

    def test_low_sum(self, low_sum_query, two_uniform_dataset):
        """Test the variance once X2 = 1/3 is revealed."""
        value = conditional_variance(low_sum_query, two_uniform_dataset, Realization({1: 1 / 3}))
        assert value == pytest.approx(6 / 25, abs=1e-12)


class TestEVar:
    """Tests for the EVar functions."""

    def test_bernoulli(self, bernoulli_dataset, below_three_query):
        """Test that cleaning X1 lowers the expected variance."""
        uncleaned = evar_bruteforce(below_three_query, bernoulli_dataset, [])
        cleaned = evar_bruteforce(below_three_query, bernoulli_dataset, ["x1"])

        # Verify both values and the ordering
        assert uncleaned == pytest.approx(23 / 576, abs=1e-12)
        assert cleaned == pytest.approx(11 / 288, abs=1e-12)
        assert cleaned < uncleaned

    def test_low_sum(self, low_sum_query, two_uniform_dataset):
        """Test the low-sum indicator under each cleaning choice."""
        values = {
            subset: evar(low_sum_query, two_uniform_dataset, subset)
            for subset in [(), ("x1",), ("x2",), ("x1", "x2")]
        }
        assert values[()] == pytest.approx(26 / 225, abs=1e-12)
        assert values[("x1",)] == pytest.approx(4 / 45, abs=1e-12)
        assert values[("x2",)] == pytest.approx(2 / 25, abs=1e-12)
        assert values[("x1", "x2")] == pytest.approx(0.0, abs=1e-12)

    def test_linear_matches_bruteforce(self, sum_bias, two_uniform_dataset):
        """Test the closed form against enumeration."""
        weights = sum_bias.linear_form()
        for subset in [(), (0,), (1,), (0, 1)]:
            assert evar_linear(weights, two_uniform_dataset, subset) == pytest.approx(
                evar_bruteforce(sum_bias, two_uniform_dataset, subset), abs=1e-12
            )
        assert evar_linear(weights, two_uniform_dataset, [0]) == pytest.approx(8 / 27)

    def test_linear_with_covariance(self):
        """Test the closed form under a covariance."""
        dataset = make_dataset([NormalSpec(0.0, 1.0), NormalSpec(0.0, 2.0)]).with_covariance(
            np.array([[1.0, 0.5], [0.5, 4.0]])
        )
        assert evar_linear(np.array([1.0, 1.0]), dataset, []) == pytest.approx(6.0)
        assert evar_linear(np.array([1.0, 1.0]), dataset, [0]) == pytest.approx(4.0)

    def test_complement(self, low_sum_query, two_uniform_dataset):
        """Test cleaning everything outside the complement."""
        assert evar_complement(low_sum_query, two_uniform_dataset, ["x2"]) == pytest.approx(
            4 / 45
        )


class TestDecomposition:
    """Tests for the per-claim decomposition."""

    def test_overlapping_claims(self):
        """Test two overlapping indicators against enumeration for every subset."""
        dataset = make_dataset(
            [
                DiscreteDist.uniform([0.0, 1.0, 2.0]),
                DiscreteDist.from_pairs([(0.0, 0.3), (2.0, 0.7)]),
                DiscreteDist.uniform([1.0, 3.0]),
                DiscreteDist.from_pairs([(-1.0, 0.2), (0.0, 0.5), (4.0, 0.3)]),
            ]
        )
        query = ThresholdIndicatorQuery(
            4, [((0, 1), 2.5, Direction.BELOW), ((1, 2, 3), 3.0, Direction.ABOVE)]
        )
        for size in range(5):
            for subset in combinations(range(4), size):
                assert evar_decomposed(query, dataset, subset) == pytest.approx(
                    evar_bruteforce(query, dataset, subset), abs=1e-12
                )

    def test_disjoint_claims_add_up(self):
        """Test that ten disjoint low-sum claims add their variances."""
        dataset = _pairs_dataset(10)
        query = ThresholdIndicatorQuery(
            20, [((2 * k, 2 * k + 1), 11 / 12, Direction.BELOW) for k in range(10)]
        )
        first_of_each = [2 * k for k in range(10)]

        # Verify additivity
        assert evar_decomposed(query, dataset, []) == pytest.approx(10 * 26 / 225, abs=1e-12)
        assert evar_decomposed(query, dataset, first_of_each) == pytest.approx(
            10 * 4 / 45, abs=1e-12
        )


class TestMarginalGain:
    """Tests for marginal gains."""

    def test_low_sum_gains(self, low_sum_query, two_uniform_dataset):
        """Test the improvement of cleaning each object first."""
        assert marginal_gain(low_sum_query, two_uniform_dataset, [], "x2") == pytest.approx(
            8 / 225, abs=1e-12
        )
        assert marginal_gain(low_sum_query, two_uniform_dataset, [], "x1") == pytest.approx(
            6 / 225, abs=1e-12
        )

    def test_point_mass_candidate(self, low_sum_query):
        """Test that a point mass gains nothing."""
        dataset = make_dataset(
            [DiscreteDist.uniform([0.0, 0.5, 1.0]), DiscreteDist.point(1 / 3)]
        )
        assert marginal_gain(low_sum_query, dataset, [], "x2") == pytest.approx(0.0, abs=1e-12)

    def test_already_cleaned(self, low_sum_query, two_uniform_dataset):
        """Test that a cleaned candidate is rejected."""
        with pytest.raises(ValueError):
            marginal_gain(low_sum_query, two_uniform_dataset, ["x1"], "x1")

    def test_montecarlo_gain(self, low_sum_query, two_uniform_dataset):
        """Test the sampled gain against the exact value."""
        estimate = marginal_gain_montecarlo(
            low_sum_query, two_uniform_dataset, [], "x2", samples=40000, seed=5
        )
        assert estimate == pytest.approx(8 / 225, abs=0.01)


class TestCurvature:
    """Tests for the curvature report."""

    def test_linear_independent(self, sum_bias, two_uniform_dataset):
        """Test that a modular EVar has zero curvature."""
        report = curvature(sum_bias, two_uniform_dataset)
        assert report.kappa == pytest.approx(0.0, abs=1e-12)
        assert not report.weak_guarantee

    def test_low_sum(self, low_sum_query, two_uniform_dataset):
        """Test the curvature of the low-sum indicator."""
        assert curvature(low_sum_query, two_uniform_dataset).kappa == pytest.approx(2 / 3)

    def test_single_object(self):
        """Test a single object."""
        dataset = make_dataset([DiscreteDist.uniform([0.0, 1.0])])
        assert curvature(LinearQuery([1.0]), dataset).kappa == pytest.approx(0.0)

    def test_undefined(self):
        """Test that zero variance everywhere leaves the curvature undefined."""
        dataset = make_dataset([DiscreteDist.point(1.0), DiscreteDist.point(2.0)])
        with pytest.raises(CurvatureUndefinedError):
            curvature(LinearQuery([1.0, 1.0]), dataset)


class TestMonteCarlo:
    """Tests for the Monte Carlo estimator."""

    def test_close_to_exact(self, low_sum_query, two_uniform_dataset):
        """Test the estimate against the exact value."""
        estimate = evar_montecarlo(low_sum_query, two_uniform_dataset, [], 50000, seed=1)
        assert estimate == pytest.approx(26 / 225, abs=0.01)

    def test_deterministic(self, low_sum_query, two_uniform_dataset):
        """Test that a seed repeats the estimate."""
        first = evar_montecarlo(low_sum_query, two_uniform_dataset, ["x1"], 2000, seed=9)
        second = evar_montecarlo(low_sum_query, two_uniform_dataset, ["x1"], 2000, seed=9)
        assert first == second


class TestEVarEvaluator:
    """Tests for the EVarEvaluator class."""

    def _wide(self):
        dataset = make_dataset([DiscreteDist.uniform(range(6))] * 3)
        query = ThresholdIndicatorQuery(3, [((0, 1, 2), 7.5, Direction.BELOW)])
        return query, dataset

    def test_cache_hits(self, low_sum_query, two_uniform_dataset, metrics):
        """Test that repeated subsets are answered from the cache."""
        evaluator = EVarEvaluator(low_sum_query, two_uniform_dataset, metrics=metrics)
        first = evaluator.evaluate(["x1"])
        second = evaluator.evaluate([0])

        # Verify a single computation
        assert first == second
        assert metrics.registry.get_sample_value("cleaning_planner_evar_cache_hits_total") == 1.0
        assert (
            metrics.registry.get_sample_value(
                "cleaning_planner_evar_evaluations_total", {"mode": "decomposed"}
            )
            == 1.0
        )

    def test_montecarlo_fallback(self, metrics):
        """Test that the cap switches to Monte Carlo estimates."""
        query, dataset = self._wide()
        exact = evar(query, dataset, [])
        evaluator = EVarEvaluator(query, dataset, cap=10, mc_samples=20000, metrics=metrics)
        estimate, estimated = evaluator.evaluate_flagged([])

        # Verify the estimate and its mark
        assert estimated
        assert estimate == pytest.approx(exact, abs=0.02)
        assert (
            metrics.registry.get_sample_value(
                "cleaning_planner_evar_evaluations_total", {"mode": "montecarlo"}
            )
            == 1.0
        )

    def test_cap_without_fallback(self):
        """Test that the cap raises when the fallback is off."""
        query, dataset = self._wide()
        evaluator = EVarEvaluator(query, dataset, cap=10, mc_fallback=False)
        with pytest.raises(EnumerationCapError):
            evaluator.evaluate([])

    def test_estimate_flags_are_per_caller(self, low_sum_query, two_uniform_dataset):
        """Test that an estimate seen by one caller does not mark another caller's values."""
        query, dataset = self._wide()
        shared = EVarEvaluator(query, dataset, cap=10, mc_samples=2000)
        first, second = shared.tracked(), shared.tracked()
        first.evaluate([])

        # Verify only the caller that received the estimate is marked
        assert first.approximate
        assert not second.approximate
        second.marginal_gain([], 0)
        assert second.approximate

        exact = EVarEvaluator(low_sum_query, two_uniform_dataset, cap=100, mc_samples=2000)
        view = exact.tracked()
        view.evaluate([0])
        assert not view.approximate
        assert exact.evaluate_flagged([0]) == (view.evaluate([0]), False)

    def test_dependent_nonlinear(self, low_sum_query, two_uniform_dataset):
        """Test that a covariance needs a linear query."""
        dependent = two_uniform_dataset.with_covariance(np.diag(two_uniform_dataset.variances))
        with pytest.raises(DependencyNotSupportedError):
            EVarEvaluator(low_sum_query, dependent).evaluate([])


def test_moments(sum_bias, two_uniform_dataset, low_sum_query):
    """Test the mean and variance of a measure."""
    mean, var = moments(sum_bias, two_uniform_dataset)
    assert mean == pytest.approx(0.0, abs=1e-12)
    assert var == pytest.approx(1 / 2 + 8 / 27)

    mean, var = moments(low_sum_query, two_uniform_dataset)
    assert mean == pytest.approx(2 / 15)
    assert var == pytest.approx(26 / 225)
