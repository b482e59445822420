"""Test configuration and fixtures for unit tests."""

import pytest

from apps.factcheck.cleaning_planner.models.claims import (
    ClaimSystem,
    Direction,
    LinearClaim,
    WindowAggregateClaim,
    window_perturbations,
)
from apps.factcheck.cleaning_planner.models.distributions import (
    Dataset,
    DiscreteDist,
    UncertainObject,
)
from apps.factcheck.cleaning_planner.models.query import ThresholdIndicatorQuery
from apps.factcheck.cleaning_planner.services.instrumentation import SolverMetrics
from apps.factcheck.cleaning_planner.services.quality import MeasureKind, QualityMeasure


def make_dataset(dists, current=None, costs=None, prefix="x"):
    """Dataset with ids x1, x2, ... and unit costs unless given."""
    n = len(dists)
    current = current if current is not None else [d.mean for d in dists]
    costs = costs if costs is not None else [1.0] * n
    return Dataset(
        tuple(
            UncertainObject(f"{prefix}{i + 1}", float(u), float(c), d)
            for i, (d, u, c) in enumerate(zip(dists, current, costs))
        )
    )


@pytest.fixture
def bernoulli_dataset():
    """Three independent Bernoulli values with success probabilities 1/2, 1/3 and 1/4."""
    dists = [
        DiscreteDist.from_pairs([(0.0, 1 - p), (1.0, p)]) for p in (1 / 2, 1 / 3, 1 / 4)
    ]
    return make_dataset(dists, current=[1.0, 1.0, 1.0])


@pytest.fixture
def below_three_query():
    """1[X1 + X2 + X3 < 3]."""
    return ThresholdIndicatorQuery(3, [((0, 1, 2), 3.0, Direction.BELOW)])


@pytest.fixture
def two_uniform_dataset():
    """X1 uniform on {0, 1/2, 1, 3/2, 2}, X2 uniform on {1/3, 1, 5/3}, both currently 1."""
    return make_dataset(
        [
            DiscreteDist.uniform([0.0, 0.5, 1.0, 1.5, 2.0]),
            DiscreteDist.uniform([1 / 3, 1.0, 5 / 3]),
        ],
        current=[1.0, 1.0],
    )


@pytest.fixture
def sum_system():
    """Claim X1 + X2 whose only perturbation is itself."""
    claim = LinearClaim((1.0, 1.0))
    return ClaimSystem.build(claim, [claim])


@pytest.fixture
def sum_bias(two_uniform_dataset, sum_system):
    """Bias of X1 + X2 against its current value 2."""
    return QualityMeasure.build(MeasureKind.BIAS, sum_system, two_uniform_dataset)


@pytest.fixture
def low_sum_query():
    """1[X1 + X2 < 11/12]."""
    return ThresholdIndicatorQuery(2, [((0, 1), 11 / 12, Direction.BELOW)])


@pytest.fixture
def crime_values():
    """Yearly counts 2014 through 2018."""
    return [9010.0, 9275.0, 9300.0, 9125.0, 9430.0]


@pytest.fixture
def crime_dataset(crime_values):
    dists = [DiscreteDist.uniform([v - 50.0, v, v + 50.0]) for v in crime_values]
    return make_dataset(dists, current=crime_values, prefix="y")


@pytest.fixture
def crime_system():
    """Last-year increase, compared against the three earlier yearly increases."""
    original = WindowAggregateClaim(left=3, right=4, window=1)
    return ClaimSystem.build(original, window_perturbations(original, 5))


@pytest.fixture
def metrics():
    """Metrics on a private registry."""
    return SolverMetrics()
