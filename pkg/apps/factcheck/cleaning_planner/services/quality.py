"""Claim-quality measures.

This module provides bias, duplicity and fragility of a claim system, both as plain
functions of a value assignment and as query functions whose distribution follows from the
uncertain dataset.
"""

import logging
from enum import Enum
from typing import List, Optional, Sequence, Union

import numpy as np

from ..models.claims import (
    Claim,
    ClaimSystem,
    Direction,
    ThresholdClaim,
    evaluate_claim,
    relative_strength,
)
from ..models.distributions import (
    DEFAULT_ENUMERATION_CAP,
    Dataset,
    DiscreteDist,
    Realization,
    condition,
    realization_grid,
    require_discrete,
)
from ..models.query import QueryFunction, QueryTerm

log = logging.getLogger(__name__)

ATOM_TOLERANCE = 1e-12


class MeasureKind(str, Enum):
    """Claim-quality measures."""

    BIAS = "bias"
    DUPLICITY = "duplicity"
    FRAGILITY = "fragility"


class QualityMeasure(QueryFunction):
    """A quality measure of a claim system against a frozen baseline.

    ``baseline`` is the original claim evaluated on current values. Relative strengths are
    taken against ``reference``, which is the claimed level for threshold originals and the
    baseline otherwise.
    """

    def __init__(
        self,
        kind: Union[MeasureKind, str],
        claim_system: ClaimSystem,
        baseline: float,
        n: int,
    ) -> None:
        self.kind = MeasureKind(kind)
        self.claim_system = claim_system
        self.baseline = float(baseline)
        super().__init__(n)

    @classmethod
    def build(
        cls, kind: Union[MeasureKind, str], claim_system: ClaimSystem, dataset: Dataset
    ) -> "QualityMeasure":
        """Create a measure whose baseline is the original claim on current values."""
        baseline = evaluate_claim(claim_system.original, dataset.current_values, dataset.ids)
        return cls(kind, claim_system, baseline, len(dataset))

    @property
    def reference(self) -> float:
        original = self.claim_system.original
        if isinstance(original, ThresholdClaim) and original.threshold is not None:
            return float(original.threshold)
        return self.baseline

    @property
    def _sign(self) -> float:
        return 1.0 if self.claim_system.direction is Direction.ABOVE else -1.0

    def strength(self, claim_values: np.ndarray) -> np.ndarray:
        """Relative strength of perturbation values against the reference."""
        if self.claim_system.direction is Direction.ABOVE:
            return relative_strength(claim_values, self.reference)
        return relative_strength(self.reference, claim_values)

    def _build_terms(self) -> List[QueryTerm]:
        system = self.claim_system
        return [
            self._term(claim, weight)
            for claim, weight in zip(system.perturbations, system.sensibilities)
        ]

    def _term(self, claim: Claim, weight: float) -> QueryTerm:
        form = claim.linear_form(self.n)
        scope = tuple(int(i) for i in np.flatnonzero(form))
        coefficients = form[list(scope)]
        offset = claim.offset
        tie = ATOM_TOLERANCE * max(1.0, abs(self.reference))
        kind = self.kind

        def fn(block: np.ndarray) -> np.ndarray:
            delta = self.strength(block @ coefficients + offset)
            if kind is MeasureKind.BIAS:
                return weight * delta
            if kind is MeasureKind.DUPLICITY:
                return (delta >= -tie).astype(float)
            return weight * np.minimum(delta, 0.0) ** 2

        return QueryTerm(scope, fn)

    def linear_form(self) -> Optional[np.ndarray]:
        if self.kind is not MeasureKind.BIAS:
            return None
        system = self.claim_system
        weights = np.zeros(self.n)
        for claim, s in zip(system.perturbations, system.sensibilities):
            weights += s * claim.linear_form(self.n)
        return self._sign * weights


def _measure(kind: MeasureKind, system: ClaimSystem, values: Sequence[float], baseline: float):
    vector = np.asarray(values, dtype=float)
    return QualityMeasure(kind, system, baseline, vector.shape[0]).evaluate(vector)


def bias(system: ClaimSystem, values: Sequence[float], baseline: float) -> float:
    """Sensibility-weighted mean relative strength of the perturbations."""
    return _measure(MeasureKind.BIAS, system, values, baseline)


def duplicity(system: ClaimSystem, values: Sequence[float], baseline: float) -> int:
    """Number of perturbations at least as strong as the original claim."""
    return int(round(_measure(MeasureKind.DUPLICITY, system, values, baseline)))


def fragility(system: ClaimSystem, values: Sequence[float], baseline: float) -> float:
    """Sensibility-weighted squared magnitude of the weakening perturbations."""
    return _measure(MeasureKind.FRAGILITY, system, values, baseline)


def canonical_dist(values: np.ndarray, probs: np.ndarray) -> DiscreteDist:
    """Sort atoms and merge values that agree within a relative 1e-12."""
    order = np.argsort(values, kind="stable")
    merged_values: List[float] = []
    merged_probs: List[float] = []
    for value, prob in zip(values[order], probs[order]):
        if merged_values and value - merged_values[-1] <= ATOM_TOLERANCE * max(
            1.0, abs(value)
        ):
            merged_probs[-1] += prob
        else:
            merged_values.append(float(value))
            merged_probs.append(float(prob))
    return DiscreteDist(tuple(merged_values), tuple(merged_probs))


def distribution_of(
    query: QueryFunction, dataset: Dataset, cap: int = DEFAULT_ENUMERATION_CAP
) -> DiscreteDist:
    """Exact distribution of a query by enumeration of the objects it reads.

    Args:
        query: Query function
        dataset: Independent dataset; referenced objects must be discrete
        cap: Enumeration cap

    Returns:
        Canonical DiscreteDist of the query value
    """
    scope = list(query.scope)
    grid, probs = realization_grid(require_discrete(dataset, scope), cap)
    full = np.tile(dataset.current_values, (grid.shape[0], 1))
    full[:, scope] = grid
    return canonical_dist(query.evaluate_many(full), probs)


def quality_distribution(
    measure: QualityMeasure,
    dataset: Dataset,
    cleaned: Optional[Realization] = None,
    cap: int = DEFAULT_ENUMERATION_CAP,
) -> DiscreteDist:
    """Distribution of a quality measure after revealing the cleaned values."""
    conditioned = condition(dataset, cleaned) if cleaned is not None else dataset
    return distribution_of(measure, conditioned, cap)
