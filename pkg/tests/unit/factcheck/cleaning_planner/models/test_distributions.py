"""Unit tests for the probability model."""

import math

import numpy as np
import pytest

from apps.factcheck.cleaning_planner.models.distributions import (
    Dataset,
    DiscreteDist,
    NormalSpec,
    UncertainObject,
    condition,
    discretize_normal,
    enumerate_realizations,
    pairwise_spread,
    realization_grid,
    require_valid,
    validate_dataset,
    variance,
)
from apps.factcheck.cleaning_planner.utils.errors import (
    DatasetValidationError,
    DependencyNotSupportedError,
    EnumerationCapError,
    NonDiscreteError,
    ValueNotInSupportError,
)
from tests.unit.conftest import make_dataset


class TestVariance:
    """Tests for the variance function."""

    def test_uniform_supports(self):
        """Test variances of the two uniform supports."""
        # Verify both worked values
        assert variance(DiscreteDist.uniform([0, 0.5, 1, 1.5, 2])) == pytest.approx(0.5, abs=1e-12)
        assert variance(DiscreteDist.uniform([1 / 3, 1, 5 / 3])) == pytest.approx(
            8 / 27, abs=1e-12
        )

    def test_point_mass(self):
        """Test that a point mass has no variance."""
        assert variance(DiscreteDist.point(7.0)) == 0.0

    def test_normal(self):
        """Test the variance of a normal."""
        assert variance(NormalSpec(mean=3.0, stddev=2.0)) == 4.0


class TestDiscreteDist:
    """Tests for the DiscreteDist class."""

    def test_from_pairs_sorts(self):
        """Test that support values are sorted with their probabilities."""
        dist = DiscreteDist.from_pairs([(2.0, 0.25), (1.0, 0.75)])

        # Verify order
        assert dist.values == (1.0, 2.0)
        assert dist.probs == (0.75, 0.25)
        assert dist.mean == pytest.approx(1.25)

    def test_from_pairs_normalize(self):
        """Test normalizing probabilities."""
        dist = DiscreteDist.from_pairs([(0.0, 1.0), (1.0, 3.0)], normalize=True)
        assert dist.probs == (0.25, 0.75)

    def test_index_of(self):
        """Test locating support values."""
        dist = DiscreteDist.uniform([1 / 3, 1, 5 / 3])
        assert dist.index_of(1.0) == 1
        with pytest.raises(ValueNotInSupportError):
            dist.index_of(0.5)


class TestEnumeration:
    """Tests for realization enumeration."""

    def test_empty_subset(self, bernoulli_dataset):
        """Test that an empty subset yields one empty realization."""
        realizations = list(enumerate_realizations(bernoulli_dataset, []))

        # Verify single certain realization
        assert len(realizations) == 1
        assert realizations[0].assignment == {}
        assert realizations[0].probability == 1.0

    def test_two_bernoullis(self, bernoulli_dataset):
        """Test enumeration order and probabilities."""
        realizations = list(enumerate_realizations(bernoulli_dataset, ["x1", "x2"]))

        # Verify lexicographic order and probabilities
        assert [r.assignment for r in realizations] == [
            {0: 0.0, 1: 0.0},
            {0: 0.0, 1: 1.0},
            {0: 1.0, 1: 0.0},
            {0: 1.0, 1: 1.0},
        ]
        assert [r.probability for r in realizations] == pytest.approx(
            [1 / 3, 1 / 6, 1 / 3, 1 / 6]
        )

    def test_product_count(self):
        """Test the number of realizations of supports sized 5, 3 and 2."""
        dataset = make_dataset(
            [
                DiscreteDist.uniform(range(5)),
                DiscreteDist.uniform(range(3)),
                DiscreteDist.uniform(range(2)),
            ]
        )
        realizations = list(enumerate_realizations(dataset, [0, 1, 2]))
        assert len(realizations) == 30
        assert math.fsum(r.probability for r in realizations) == pytest.approx(1.0)

    def test_cap(self):
        """Test that exceeding the cap raises."""
        dataset = make_dataset([DiscreteDist.uniform(range(10))] * 3)
        with pytest.raises(EnumerationCapError) as excinfo:
            list(enumerate_realizations(dataset, [0, 1, 2], cap=999))
        assert excinfo.value.size == 1000

    def test_grid_matches_enumeration(self, bernoulli_dataset):
        """Test that the grid rows follow the enumeration order."""
        values, probs = realization_grid(bernoulli_dataset.dists)
        realizations = list(enumerate_realizations(bernoulli_dataset, [0, 1, 2]))

        # Verify row by row
        assert values.shape == (8, 3)
        for row, prob, realization in zip(values, probs, realizations):
            assert list(row) == [realization.assignment[i] for i in range(3)]
            assert prob == pytest.approx(realization.probability)

    def test_normal_rejected(self):
        """Test that normal objects cannot be enumerated."""
        dataset = make_dataset([NormalSpec(0.0, 1.0)])
        with pytest.raises(NonDiscreteError):
            list(enumerate_realizations(dataset, [0]))

    def test_dependent_rejected(self, bernoulli_dataset):
        """Test that a covariance blocks enumeration."""
        dependent = bernoulli_dataset.with_covariance(np.diag(bernoulli_dataset.variances))
        with pytest.raises(DependencyNotSupportedError):
            list(enumerate_realizations(dependent, [0]))


class TestCondition:
    """Tests for conditioning."""

    def test_empty_assignment(self, bernoulli_dataset):
        """Test that conditioning on nothing is the identity."""
        assert condition(bernoulli_dataset, {}) is bernoulli_dataset

    def test_assign_one(self, bernoulli_dataset):
        """Test the remaining probability of an all-ones outcome."""
        conditioned = condition(bernoulli_dataset, {"x1": 1.0})

        # Verify the conditioned object and the remaining uncertainty
        assert conditioned.objects[0].dist == DiscreteDist.point(1.0)
        all_ones = [
            r.probability
            for r in enumerate_realizations(conditioned, [0, 1, 2])
            if all(v == 1.0 for v in r.assignment.values())
        ]
        assert math.fsum(all_ones) == pytest.approx(1 / 12)

    def test_value_outside_support(self, bernoulli_dataset):
        """Test that a value outside the support is rejected."""
        with pytest.raises(ValueNotInSupportError, match="x2"):
            condition(bernoulli_dataset, {"x2": 0.5})

    def test_covariance_rows_cleared(self):
        """Test that conditioning zeroes the covariance of the fixed object."""
        dataset = Dataset(
            (
                UncertainObject("a", 0.0, 1.0, NormalSpec(0.0, 1.0)),
                UncertainObject("b", 0.0, 1.0, NormalSpec(0.0, 1.0)),
            ),
            np.array([[1.0, 0.5], [0.5, 1.0]]),
        )
        conditioned = condition(dataset, {"a": 0.3})
        assert conditioned.covariance.tolist() == [[0.0, 0.0], [0.0, 1.0]]
        assert conditioned.objects[0].dist == DiscreteDist.point(0.3)


class TestDiscretizeNormal:
    """Tests for normal discretization."""

    def test_two_points(self):
        """Test the half-normal conditional means."""
        dist = discretize_normal(NormalSpec(0.0, 1.0), 2)
        expected = math.sqrt(2 / math.pi)

        # Verify symmetric support
        assert dist.values == pytest.approx((-expected, expected), abs=1e-9)
        assert dist.probs == (0.5, 0.5)

    def test_zero_stddev(self):
        """Test that a zero-variance normal becomes a point mass."""
        assert discretize_normal(NormalSpec(5.0, 0.0), 8) == DiscreteDist.point(5.0)

    def test_single_point(self):
        """Test that a single interval is the mean."""
        assert discretize_normal(NormalSpec(0.0, 1.0), 1) == DiscreteDist.point(0.0)

    def test_mean_preserved(self):
        """Test that the discretized mean matches and the variance shrinks."""
        dist = discretize_normal(NormalSpec(2.0, 3.0), 16)
        assert dist.mean == pytest.approx(2.0, abs=1e-9)
        assert variance(dist) < 9.0

    def test_dataset_discretized(self):
        """Test discretizing a whole dataset."""
        dataset = make_dataset([NormalSpec(0.0, 1.0), DiscreteDist.point(1.0)])
        discretized = dataset.discretized(4)
        assert discretized.objects[0].dist.size == 4
        assert discretized.objects[1].dist == DiscreteDist.point(1.0)


class TestValidation:
    """Tests for dataset validation."""

    def test_valid(self, bernoulli_dataset):
        """Test that a well-formed dataset passes."""
        assert validate_dataset(bernoulli_dataset) == []
        assert require_valid(bernoulli_dataset) is bernoulli_dataset

    def test_duplicate_id(self):
        """Test that a duplicate id is named."""
        dataset = Dataset(
            (
                UncertainObject("a", 0.0, 1.0, DiscreteDist.point(0.0)),
                UncertainObject("a", 0.0, 1.0, DiscreteDist.point(0.0)),
            )
        )
        assert any("duplicate id 'a'" in p for p in validate_dataset(dataset))

    def test_probability_deficit(self):
        """Test that probabilities summing to 0.9 report the deficit."""
        dataset = make_dataset([DiscreteDist((0.0, 1.0), (0.45, 0.45))])
        problems = validate_dataset(dataset)
        assert len(problems) == 1
        assert "deficit 0.1" in problems[0]

    def test_collects_every_violation(self):
        """Test that all violations are reported together."""
        dataset = Dataset(
            (
                UncertainObject("a", math.nan, 0.0, DiscreteDist.point(0.0)),
                UncertainObject("b", 0.0, -1.0, NormalSpec(0.0, -1.0)),
            )
        )
        with pytest.raises(DatasetValidationError) as excinfo:
            require_valid(dataset)
        assert len(excinfo.value.violations) == 4

    def test_covariance_diagonal(self):
        """Test that the covariance diagonal must match the variances."""
        dataset = make_dataset([NormalSpec(0.0, 1.0), NormalSpec(0.0, 2.0)]).with_covariance(
            np.eye(2)
        )
        problems = validate_dataset(dataset)
        assert len(problems) == 1
        assert "x2" in problems[0]


class TestDataset:
    """Tests for the Dataset class."""

    def test_resolve(self, bernoulli_dataset):
        """Test resolving ids and positions."""
        assert bernoulli_dataset.resolve(["x3", 0, "x1"]) == (0, 2)

    def test_unknown_id(self, bernoulli_dataset):
        """Test that unknown ids raise KeyError."""
        with pytest.raises(KeyError):
            bernoulli_dataset.index_of("nope")

    def test_equality_with_covariance(self, bernoulli_dataset):
        """Test equality including the covariance."""
        cov = np.diag(bernoulli_dataset.variances)
        assert bernoulli_dataset.with_covariance(cov) == bernoulli_dataset.with_covariance(cov)
        assert bernoulli_dataset.with_covariance(cov) != bernoulli_dataset


def test_pairwise_spread_identity():
    """Test that the pairwise spread equals the weighted power-mean gap."""
    rng = np.random.default_rng(3)
    w = rng.random(6)
    x = rng.normal(size=6)

    # Verify sum_{i<j} w_i w_j (x_i - x_j)^2 = (sum w)(sum w x^2) - (sum w x)^2
    expected = w.sum() * (w * x * x).sum() - (w * x).sum() ** 2
    assert pairwise_spread(w, x) == pytest.approx(expected, rel=1e-12)
    assert pairwise_spread([1.0, 1.0], [0.0, 2.0]) == pytest.approx(4.0)
