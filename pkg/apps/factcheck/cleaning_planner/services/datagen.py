"""Synthetic dataset generators.

Every random draw comes from its own Philox stream keyed by (seed, object position, field),
so adding a field or growing the dataset never changes the draws already made.
"""

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.stats import lognorm

from ..models.distributions import (
    Dataset,
    DiscreteDist,
    Dist,
    NormalSpec,
    UncertainObject,
    draw,
    require_valid,
)
from ..utils.errors import InsufficientRangeError
from ..utils.streams import philox

log = logging.getLogger(__name__)

LN_TAIL_QUANTILE = 0.999
LN_RIGHT_END_OFFSET = 0.01

# Stream fields
SUPPORT_SIZE = 0
SUPPORT_VALUES = 1
PROBABILITIES = 2
CURRENT_VALUE = 3
COST = 4
SIGMA = 5
LN_SHAPE = 6

# Sample series shaped like yearly adoption counts
# fmt: off
ADOPTIONS_SERIES: Tuple[float, ...] = (
    104088.0, 108463.0, 113191.0, 120347.0, 126951.0, 118779.0, 119327.0, 123322.0,
    125589.0, 127315.0, 127485.0, 127630.0, 127407.0, 130269.0, 127792.0, 132498.0,
    133737.0, 133118.0, 135814.0, 139815.0, 133737.0, 127798.0, 118668.0, 119514.0,
    120334.0, 125106.0,
)
# fmt: on


class Family(str, Enum):
    """Value distribution families."""

    UR = "UR"  # random supports, random probabilities
    LN = "LN"  # quantized log-normal
    SM = "SM"  # random supports, polarized probabilities
    NORMAL_MEANFIXED = "normal-meanfixed"


class CostKind(str, Enum):
    UNIFORM = "uniform"
    RECENCY = "recency"
    TWO_POINT = "two-point"


@dataclass(frozen=True)
class CostModel:
    """Cleaning cost generator."""

    kind: CostKind = CostKind.UNIFORM
    params: Tuple[float, ...] = (1.0, 10.0)

    @classmethod
    def uniform(cls, low: float = 1.0, high: float = 10.0) -> "CostModel":
        return cls(CostKind.UNIFORM, (low, high))

    @classmethod
    def recency(cls, base: float = 200.0, step: float = 5.0, jitter: float = 5.0) -> "CostModel":
        """Costs fall by ``step`` per position, each within a ``jitter`` band below its level."""
        return cls(CostKind.RECENCY, (base, step, jitter))

    @classmethod
    def two_point(cls, low: float = 1.0, high: float = 10.0) -> "CostModel":
        return cls(CostKind.TWO_POINT, (low, high))

    def check(self, n: int) -> None:
        """Raise InsufficientRangeError if the model cannot produce ``n`` positive costs."""
        if self.kind is CostKind.RECENCY:
            base, step, jitter = self.params
            if base - step * (n - 1) - jitter <= 0:
                raise InsufficientRangeError(
                    f"recency costs for {n} objects reach {base - step * (n - 1) - jitter} <= 0"
                )
        else:
            low, high = self.params
            if low <= 0 or high < low:
                raise InsufficientRangeError(f"{self.kind.value} costs need 0 < low <= high")

    def cost(self, seed: int, index: int) -> float:
        rng = philox(seed, index, COST)
        if self.kind is CostKind.RECENCY:
            base, step, jitter = self.params
            level = base - step * index
            return float(rng.uniform(level - jitter, level))
        low, high = self.params
        if self.kind is CostKind.TWO_POINT:
            return low if rng.random() < 0.5 else high
        return float(rng.uniform(low, high))

    def costs(self, n: int, seed: int) -> np.ndarray:
        self.check(n)
        return np.array([self.cost(seed, i) for i in range(n)])


@dataclass(frozen=True)
class GenSpec:
    """Parameters of a synthetic dataset.

    Attributes:
        family: Distribution family
        n: Number of objects
        seed: Run seed
        cost_model: Cost generator
        support_range: Inclusive value range for UR and SM supports, and the current-value
                       range for normal-meanfixed
        max_support: Support sizes are uniform in 1..max_support
        std_range: Standard deviation range for normal-meanfixed
    """

    family: Family
    n: int
    seed: int = 0
    cost_model: CostModel = field(default_factory=CostModel.uniform)
    support_range: Tuple[float, float] = (1.0, 100.0)
    max_support: int = 6
    std_range: Tuple[float, float] = (1.0, 50.0)

    def check(self) -> None:
        if self.n < 1:
            raise InsufficientRangeError(f"n must be >= 1, got {self.n}")
        if self.max_support < 1:
            raise InsufficientRangeError(f"max_support must be >= 1, got {self.max_support}")
        low, high = self.support_range
        if self.family in (Family.UR, Family.SM):
            if int(high) - int(low) + 1 < self.max_support:
                raise InsufficientRangeError(
                    f"range [{low}, {high}] holds fewer than {self.max_support} integers"
                )
        elif high < low:
            raise InsufficientRangeError(f"empty range [{low}, {high}]")
        self.cost_model.check(self.n)


def _support_size(spec: GenSpec, index: int) -> int:
    return int(philox(spec.seed, index, SUPPORT_SIZE).integers(1, spec.max_support + 1))


def _integer_support(spec: GenSpec, index: int, size: int) -> np.ndarray:
    low, high = int(spec.support_range[0]), int(spec.support_range[1])
    rng = philox(spec.seed, index, SUPPORT_VALUES)
    return rng.choice(np.arange(low, high + 1), size=size, replace=False).astype(float)


def _uniform_weights(spec: GenSpec, index: int, size: int) -> np.ndarray:
    return 1.0 - philox(spec.seed, index, PROBABILITIES).random(size)


def _polarized_weights(spec: GenSpec, index: int, size: int) -> np.ndarray:
    """Draws from (0, 0.1] or [0.9, 1], each side with probability 1/2."""
    rng = philox(spec.seed, index, PROBABILITIES)
    side = rng.random(size) < 0.5
    u = rng.random(size)
    return np.where(side, 0.1 * (1.0 - u), 0.9 + 0.1 * u)


def _lognormal(spec: GenSpec, index: int, size: int) -> DiscreteDist:
    """Equal-probability intervals of LogNormal(0, s), s ~ U(0, 1].

    Each interval is represented by a point just left of its right end, weighted by the
    density there; the unbounded last interval ends at the 99.9% quantile.
    """
    shape = 1.0 - float(philox(spec.seed, index, LN_SHAPE).random())
    dist = lognorm(s=shape)
    edges = dist.ppf(np.linspace(0.0, 1.0, size + 1))
    edges[-1] = dist.ppf(LN_TAIL_QUANTILE)
    points = edges[1:] - LN_RIGHT_END_OFFSET * np.diff(edges)
    return DiscreteDist.from_pairs(zip(points, dist.pdf(points)), normalize=True)


def _distribution(spec: GenSpec, index: int) -> Dist:
    if spec.family is Family.NORMAL_MEANFIXED:
        rng = philox(spec.seed, index, SIGMA)
        return NormalSpec(mean=0.0, stddev=float(rng.uniform(*spec.std_range)))
    size = _support_size(spec, index)
    if spec.family is Family.LN:
        return _lognormal(spec, index, size)
    values = _integer_support(spec, index, size)
    if spec.family is Family.SM:
        weights = _polarized_weights(spec, index, size)
    else:
        weights = _uniform_weights(spec, index, size)
    return DiscreteDist.from_pairs(zip(values, weights), normalize=True)


def generate_object(spec: GenSpec, index: int) -> UncertainObject:
    """Object ``index`` of the dataset described by ``spec``."""
    dist = _distribution(spec, index)
    rng = philox(spec.seed, index, CURRENT_VALUE)
    if isinstance(dist, NormalSpec):
        current = float(rng.uniform(*spec.support_range))
        dist = NormalSpec(mean=current, stddev=dist.stddev)
    else:
        current = float(draw(dist, rng, 1)[0])
    return UncertainObject(
        id=f"o{index}",
        current_value=current,
        cost=spec.cost_model.cost(spec.seed, index),
        dist=dist,
    )


def generate(spec: GenSpec) -> Dataset:
    """Synthetic dataset, fully determined by ``spec``.

    Raises:
        InsufficientRangeError: If the ranges in ``spec`` cannot produce the dataset
    """
    spec.check()
    dataset = require_valid(Dataset(tuple(generate_object(spec, i) for i in range(spec.n))))
    log.debug(f"Generated {spec.family.value} dataset with {spec.n} objects (seed {spec.seed})")
    return dataset


def inject_dependency(sigmas: Sequence[float], gamma: float) -> np.ndarray:
    """Covariance gamma^|j-i| sigma_i sigma_j between objects at positions i and j."""
    if not 0.0 <= gamma <= 1.0:
        raise ValueError(f"gamma must lie in [0, 1], got {gamma}")
    sigmas = np.asarray(sigmas, dtype=float)
    if np.any(sigmas < 0):
        raise ValueError("standard deviations must be >= 0")
    positions = np.arange(len(sigmas))
    lags = np.abs(positions[:, None] - positions[None, :])
    covariance = np.power(gamma, lags) * np.outer(sigmas, sigmas)
    if gamma == 1.0 and len(sigmas) > 1:
        log.warning("gamma = 1 makes every object fully correlated; covariance is rank deficient")
    return covariance


def is_rank_deficient(covariance: np.ndarray) -> bool:
    covariance = np.asarray(covariance, dtype=float)
    return int(np.linalg.matrix_rank(covariance)) < covariance.shape[0]


def with_dependency(dataset: Dataset, gamma: float) -> Dataset:
    """Dataset with an injected covariance built from its own standard deviations."""
    return dataset.with_covariance(inject_dependency(np.sqrt(dataset.variances), gamma))


def adoptions_like(
    n: int = len(ADOPTIONS_SERIES),
    std_hi: float = 50.0,
    cost_hi: float = 100.0,
    seed: int = 0,
    series: Optional[Sequence[float]] = None,
) -> Dataset:
    """Normal objects centered at a yearly count series.

    Standard deviations are uniform in [1, std_hi] and costs uniform in [1, cost_hi];
    std_hi = 0 yields point masses.

    Raises:
        InsufficientRangeError: If the series is shorter than ``n``
    """
    series = list(series if series is not None else ADOPTIONS_SERIES)
    if n < 1 or n > len(series):
        raise InsufficientRangeError(f"series has {len(series)} values, {n} requested")
    if cost_hi < 1:
        raise InsufficientRangeError(f"cost_hi must be >= 1, got {cost_hi}")

    objects: List[UncertainObject] = []
    for i, value in enumerate(series[:n]):
        dist: Dist
        if std_hi <= 0:
            dist = DiscreteDist.point(value)
        else:
            stddev = float(philox(seed, i, SIGMA).uniform(min(1.0, std_hi), std_hi))
            dist = NormalSpec(mean=float(value), stddev=stddev)
        cost = float(philox(seed, i, COST).uniform(1.0, cost_hi))
        objects.append(UncertainObject(f"y{i}", float(value), cost, dist))
    return Dataset(tuple(objects))
