"""Probability model for uncertain objects.

This module provides the value distributions of database objects, the dataset container,
realization enumeration, conditioning and dataset validation.
"""

import itertools
import logging
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Dict, Iterable, Iterator, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.stats import norm

from ..utils.errors import (
    DatasetValidationError,
    DependencyNotSupportedError,
    EnumerationCapError,
    NonDiscreteError,
    ValueNotInSupportError,
)

log = logging.getLogger(__name__)

DEFAULT_ENUMERATION_CAP = 10**7
PROBABILITY_TOLERANCE = 1e-12
COVARIANCE_TOLERANCE = 1e-9

ObjectRef = Union[str, int]


@dataclass(frozen=True)
class DiscreteDist:
    """Finite-support distribution of one object value."""

    values: Tuple[float, ...]
    probs: Tuple[float, ...]

    @classmethod
    def from_pairs(
        cls, pairs: Iterable[Tuple[float, float]], normalize: bool = False
    ) -> "DiscreteDist":
        """Build a distribution from (value, probability) pairs, sorted by value.

        Args:
            pairs: Support values with their probabilities
            normalize: Rescale probabilities to sum to one

        Returns:
            DiscreteDist object
        """
        ordered = sorted((float(v), float(p)) for v, p in pairs)
        values = tuple(v for v, _ in ordered)
        probs = tuple(p for _, p in ordered)
        if normalize:
            total = math.fsum(probs)
            probs = tuple(p / total for p in probs)
        return cls(values=values, probs=probs)

    @classmethod
    def point(cls, value: float) -> "DiscreteDist":
        return cls(values=(float(value),), probs=(1.0,))

    @classmethod
    def uniform(cls, values: Iterable[float]) -> "DiscreteDist":
        support = sorted(float(v) for v in values)
        return cls(values=tuple(support), probs=tuple(1.0 / len(support) for _ in support))

    @property
    def size(self) -> int:
        return len(self.values)

    @property
    def support(self) -> List[Tuple[float, float]]:
        return list(zip(self.values, self.probs))

    @cached_property
    def values_array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=float)

    @cached_property
    def probs_array(self) -> np.ndarray:
        return np.asarray(self.probs, dtype=float)

    @property
    def mean(self) -> float:
        return float(self.values_array @ self.probs_array)

    @property
    def is_point_mass(self) -> bool:
        return self.size == 1

    def index_of(self, value: float) -> int:
        """Return the support position of ``value``.

        Raises:
            ValueNotInSupportError: If the value is not a support value
        """
        matches = np.flatnonzero(np.isclose(self.values_array, value, rtol=1e-12, atol=1e-12))
        if matches.size == 0:
            raise ValueNotInSupportError(f"value {value} not in support {list(self.values)}")
        return int(matches[0])

    def violations(self, label: str = "distribution") -> List[str]:
        """List invariant violations of this distribution."""
        problems = []
        if self.size == 0:
            return [f"{label}: empty support"]
        if len(self.probs) != self.size:
            problems.append(f"{label}: {self.size} values but {len(self.probs)} probabilities")
            return problems
        for value, prob in self.support:
            if not math.isfinite(value):
                problems.append(f"{label}: non-finite support value {value}")
            if not 0.0 <= prob <= 1.0:
                problems.append(f"{label}: probability {prob} outside [0, 1]")
        total = math.fsum(self.probs)
        if abs(total - 1.0) > PROBABILITY_TOLERANCE:
            problems.append(
                f"{label}: probabilities sum to {total:.12g} (deficit {1.0 - total:.12g}), "
                "normalization required"
            )
        if any(b <= a for a, b in zip(self.values, self.values[1:])):
            problems.append(f"{label}: support values not strictly increasing")
        return problems


@dataclass(frozen=True)
class NormalSpec:
    """Normal value distribution; stddev 0 is a point mass."""

    mean: float
    stddev: float

    def violations(self, label: str = "distribution") -> List[str]:
        problems = []
        if not math.isfinite(self.mean):
            problems.append(f"{label}: non-finite mean {self.mean}")
        if not (math.isfinite(self.stddev) and self.stddev >= 0):
            problems.append(f"{label}: stddev {self.stddev} must be finite and >= 0")
        return problems


Dist = Union[DiscreteDist, NormalSpec]


@dataclass(frozen=True)
class UncertainObject:
    """One database value: current value, cleaning cost and value distribution."""

    id: str
    current_value: float
    cost: float
    dist: Dist

    @property
    def is_discrete(self) -> bool:
        return isinstance(self.dist, DiscreteDist)


@dataclass(frozen=True, eq=False)
class Dataset:
    """Ordered collection of uncertain objects.

    A missing covariance asserts mutual independence of the object values.
    """

    objects: Tuple[UncertainObject, ...]
    covariance: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "objects", tuple(self.objects))
        if self.covariance is not None:
            object.__setattr__(self, "covariance", np.asarray(self.covariance, dtype=float))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        if self.objects != other.objects:
            return False
        if self.covariance is None or other.covariance is None:
            return self.covariance is None and other.covariance is None
        return bool(np.array_equal(self.covariance, other.covariance))

    __hash__ = None  # type: ignore[assignment]

    def __len__(self) -> int:
        return len(self.objects)

    @cached_property
    def ids(self) -> Tuple[str, ...]:
        return tuple(obj.id for obj in self.objects)

    @cached_property
    def _positions(self) -> Dict[str, int]:
        return {obj_id: i for i, obj_id in enumerate(self.ids)}

    @cached_property
    def current_values(self) -> np.ndarray:
        return np.array([obj.current_value for obj in self.objects], dtype=float)

    @cached_property
    def costs(self) -> np.ndarray:
        return np.array([obj.cost for obj in self.objects], dtype=float)

    @cached_property
    def variances(self) -> np.ndarray:
        return np.array([variance(obj.dist) for obj in self.objects], dtype=float)

    @property
    def dists(self) -> List[Dist]:
        return [obj.dist for obj in self.objects]

    @property
    def total_cost(self) -> float:
        return float(math.fsum(self.costs))

    @property
    def is_independent(self) -> bool:
        return self.covariance is None

    def index_of(self, ref: ObjectRef) -> int:
        """Resolve an object id or position to a position."""
        if isinstance(ref, (int, np.integer)) and not isinstance(ref, bool):
            if not 0 <= int(ref) < len(self):
                raise KeyError(f"object position {ref} out of range")
            return int(ref)
        try:
            return self._positions[str(ref)]
        except KeyError:
            raise KeyError(f"unknown object id '{ref}'") from None

    def resolve(self, refs: Iterable[ObjectRef]) -> Tuple[int, ...]:
        """Resolve refs to sorted, distinct positions."""
        return tuple(sorted({self.index_of(ref) for ref in refs}))

    def is_discrete(self, index: int) -> bool:
        return self.objects[index].is_discrete

    def replace_dists(self, dists: Mapping[int, Dist]) -> "Dataset":
        objects = list(self.objects)
        for index, dist in dists.items():
            obj = objects[index]
            objects[index] = UncertainObject(obj.id, obj.current_value, obj.cost, dist)
        return Dataset(tuple(objects), self.covariance)

    def discretized(self, points: int) -> "Dataset":
        """Return a copy where every normal object is discretized into ``points`` atoms."""
        return self.replace_dists(
            {
                i: discretize_normal(obj.dist, points)
                for i, obj in enumerate(self.objects)
                if isinstance(obj.dist, NormalSpec)
            }
        )

    def without_covariance(self) -> "Dataset":
        return Dataset(self.objects, None)

    def with_covariance(self, covariance: Optional[np.ndarray]) -> "Dataset":
        return Dataset(self.objects, covariance)


@dataclass(frozen=True)
class Realization:
    """A joint assignment of values to object positions and its probability."""

    assignment: Dict[int, float] = field(default_factory=dict)
    probability: float = 1.0


def variance(dist: Dist) -> float:
    """Variance of a distribution.

    Args:
        dist: Discrete or normal distribution

    Returns:
        E[X^2] - E[X]^2, never negative
    """
    if isinstance(dist, NormalSpec):
        return float(dist.stddev) ** 2
    centered = dist.values_array - dist.mean
    return float(max(dist.probs_array @ (centered * centered), 0.0))


def pairwise_spread(weights: Sequence[float], values: Sequence[float]) -> float:
    """Weighted pairwise spread sum_{i<j} w_i w_j (x_i - x_j)^2."""
    w = np.asarray(weights, dtype=float)
    x = np.asarray(values, dtype=float)
    diff = x[:, None] - x[None, :]
    return float(0.5 * np.einsum("i,j,ij->", w, w, diff * diff))


def require_discrete(dataset: Dataset, indices: Sequence[int]) -> List[DiscreteDist]:
    dists = []
    for index in indices:
        dist = dataset.objects[index].dist
        if not isinstance(dist, DiscreteDist):
            raise NonDiscreteError(
                f"object '{dataset.ids[index]}' has a normal distribution; discretize it first"
            )
        dists.append(dist)
    return dists


def _product_size(dists: Sequence[DiscreteDist]) -> int:
    return math.prod(d.size for d in dists)


def realization_grid(
    dists: Sequence[DiscreteDist], cap: int = DEFAULT_ENUMERATION_CAP
) -> Tuple[np.ndarray, np.ndarray]:
    """Materialize the joint support of independent discrete variables.

    Rows follow the same lexicographic order as ``enumerate_realizations``: the first
    variable varies slowest.

    Args:
        dists: Marginal distributions, one per column
        cap: Largest permitted number of rows

    Returns:
        Tuple of a (K, d) value matrix and a (K,) probability vector
    """
    size = _product_size(dists)
    if size > cap:
        raise EnumerationCapError(size, cap)
    if not dists:
        return np.zeros((1, 0)), np.ones(1)
    value_axes = np.meshgrid(*[d.values_array for d in dists], indexing="ij")
    prob_axes = np.meshgrid(*[d.probs_array for d in dists], indexing="ij")
    values = np.stack([axis.reshape(-1) for axis in value_axes], axis=1)
    probs = np.prod(np.stack([axis.reshape(-1) for axis in prob_axes], axis=1), axis=1)
    return values, probs


def enumerate_realizations(
    dataset: Dataset, subset: Iterable[ObjectRef], cap: int = DEFAULT_ENUMERATION_CAP
) -> Iterator[Realization]:
    """Stream every joint outcome of cleaning ``subset``.

    Args:
        dataset: Independent dataset
        subset: Object ids or positions to enumerate
        cap: Largest permitted number of realizations

    Yields:
        Realization objects in lexicographic order by object position, then support position
    """
    if not dataset.is_independent:
        raise DependencyNotSupportedError("realization enumeration requires independent objects")
    indices = dataset.resolve(subset)
    dists = require_discrete(dataset, indices)
    size = _product_size(dists)
    if size > cap:
        raise EnumerationCapError(size, cap)

    for combo in itertools.product(*[range(d.size) for d in dists]):
        assignment = {}
        probability = 1.0
        for index, dist, k in zip(indices, dists, combo):
            assignment[index] = dist.values[k]
            probability *= dist.probs[k]
        yield Realization(assignment=assignment, probability=probability)


def condition(
    dataset: Dataset, assignment: Union[Realization, Mapping[ObjectRef, float]]
) -> Dataset:
    """Fix the assigned objects to point masses at their assigned values.

    Args:
        dataset: Dataset to condition
        assignment: Realization or mapping from object id/position to value

    Returns:
        Conditioned dataset; unassigned objects are unchanged

    Raises:
        ValueNotInSupportError: If a value is outside a discrete object's support
    """
    values = assignment.assignment if isinstance(assignment, Realization) else assignment
    if not values:
        return dataset

    replacements: Dict[int, Dist] = {}
    for ref, value in values.items():
        index = dataset.index_of(ref)
        dist = dataset.objects[index].dist
        if isinstance(dist, DiscreteDist):
            try:
                value = dist.values[dist.index_of(value)]
            except ValueNotInSupportError as e:
                raise ValueNotInSupportError(f"object '{dataset.ids[index]}': {e}") from None
        replacements[index] = DiscreteDist.point(value)

    conditioned = dataset.replace_dists(replacements)
    if dataset.covariance is not None:
        covariance = dataset.covariance.copy()
        for index in replacements:
            covariance[index, :] = 0.0
            covariance[:, index] = 0.0
        conditioned = conditioned.with_covariance(covariance)
    return conditioned


def discretize_normal(spec: NormalSpec, points: int) -> DiscreteDist:
    """Discretize a normal into equal-probability intervals.

    Each support value is the conditional mean of its interval and carries probability
    1/points.

    Args:
        spec: Normal distribution
        points: Number of intervals

    Returns:
        DiscreteDist object
    """
    if points < 1:
        raise ValueError(f"points must be >= 1, got {points}")
    if spec.stddev == 0 or points == 1:
        return DiscreteDist.point(spec.mean)

    edges = norm.ppf(np.linspace(0.0, 1.0, points + 1))
    densities = norm.pdf(edges)
    means = spec.mean + spec.stddev * (densities[:-1] - densities[1:]) * points
    return DiscreteDist(values=tuple(float(v) for v in means), probs=(1.0 / points,) * points)


def draw(dist: Dist, rng: np.random.Generator, size: int) -> np.ndarray:
    """Sample ``size`` values from a distribution."""
    if isinstance(dist, NormalSpec):
        return rng.normal(dist.mean, dist.stddev, size=size)
    return rng.choice(dist.values_array, size=size, p=dist.probs_array)


def validate_dataset(dataset: Dataset) -> List[str]:
    """Check every dataset invariant.

    Args:
        dataset: Dataset to validate

    Returns:
        All violation descriptions; an empty list means the dataset is valid
    """
    problems: List[str] = []
    if len(dataset) == 0:
        problems.append("dataset has no objects")

    seen = set()
    for obj in dataset.objects:
        label = f"object '{obj.id}'"
        if obj.id in seen:
            problems.append(f"duplicate id '{obj.id}'")
        seen.add(obj.id)
        if not (math.isfinite(obj.cost) and obj.cost > 0):
            problems.append(f"{label}: cost {obj.cost} must be strictly positive")
        if not math.isfinite(obj.current_value):
            problems.append(f"{label}: non-finite current value {obj.current_value}")
        problems.extend(obj.dist.violations(label))

    if dataset.covariance is not None:
        cov = dataset.covariance
        n = len(dataset)
        if cov.shape != (n, n):
            problems.append(f"covariance shape {cov.shape} does not match {n} objects")
        else:
            if not np.allclose(cov, cov.T, rtol=0.0, atol=COVARIANCE_TOLERANCE):
                problems.append("covariance matrix is not symmetric")
            variances = np.array([variance(obj.dist) for obj in dataset.objects])
            for i in np.flatnonzero(np.abs(np.diag(cov) - variances) > COVARIANCE_TOLERANCE):
                problems.append(
                    f"object '{dataset.ids[i]}': covariance diagonal {cov[i, i]} differs from "
                    f"variance {variances[i]}"
                )
    return problems


def require_valid(dataset: Dataset) -> Dataset:
    """Raise DatasetValidationError listing all violations, else return the dataset."""
    problems = validate_dataset(dataset)
    if problems:
        raise DatasetValidationError(problems)
    return dataset
