"""Query functions.

A query function maps a full assignment of object values to a real number. Queries are
expressed as a constant plus a sum of terms, each reading only a few objects, so that
expected variances can be computed claim by claim.
"""

from abc import ABC, abstractmethod
from dataclasses import dataclass
from functools import cached_property
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from .claims import Direction


@dataclass(frozen=True)
class QueryTerm:
    """One additive term of a query and the object positions it reads.

    ``fn`` maps a (K, len(scope)) value matrix to K term values.
    """

    scope: Tuple[int, ...]
    fn: Callable[[np.ndarray], np.ndarray]


class QueryFunction(ABC):
    """Real-valued function of the object values."""

    kind: str = "query"

    def __init__(self, n: int, offset: float = 0.0) -> None:
        self.n = n
        self.offset = float(offset)

    @abstractmethod
    def _build_terms(self) -> List[QueryTerm]:
        """Create the additive terms."""

    @cached_property
    def terms(self) -> List[QueryTerm]:
        return self._build_terms()

    @cached_property
    def scope(self) -> Tuple[int, ...]:
        """Positions the query depends on."""
        return tuple(sorted({i for term in self.terms for i in term.scope}))

    def linear_form(self) -> Optional[np.ndarray]:
        """Coefficient vector when the query is linear, else None."""
        return None

    @property
    def is_linear(self) -> bool:
        return self.linear_form() is not None

    def evaluate_many(self, values: np.ndarray) -> np.ndarray:
        """Evaluate on each row of a (K, n) full-assignment matrix."""
        values = np.atleast_2d(np.asarray(values, dtype=float))
        out = np.full(values.shape[0], self.offset)
        for term in self.terms:
            out += term.fn(values[:, list(term.scope)])
        return out

    def evaluate(self, values: Sequence[float]) -> float:
        return float(self.evaluate_many(np.asarray(values, dtype=float)[None, :])[0])


class LinearQuery(QueryFunction):
    """offset + w . x."""

    kind = "linear"

    def __init__(self, weights: Sequence[float], offset: float = 0.0) -> None:
        self.weights = np.asarray(weights, dtype=float)
        super().__init__(len(self.weights), offset)

    def _build_terms(self) -> List[QueryTerm]:
        scope = tuple(int(i) for i in np.flatnonzero(self.weights))
        coefficients = self.weights[list(scope)]
        return [QueryTerm(scope, lambda block: block @ coefficients)] if scope else []

    def linear_form(self) -> Optional[np.ndarray]:
        return self.weights


class ThresholdIndicatorQuery(QueryFunction):
    """Sum of indicators 1[sum of members < gamma] (below) or 1[... > gamma] (above)."""

    kind = "threshold-indicator"

    def __init__(
        self, n: int, indicators: Sequence[Tuple[Sequence[int], float, Direction]]
    ) -> None:
        self.indicators = [
            (tuple(sorted(int(i) for i in members)), float(gamma), Direction(direction))
            for members, gamma, direction in indicators
        ]
        super().__init__(n)

    def _build_terms(self) -> List[QueryTerm]:
        return [
            QueryTerm(members, _indicator(gamma, direction))
            for members, gamma, direction in self.indicators
        ]


def _indicator(gamma: float, direction: Direction) -> Callable[[np.ndarray], np.ndarray]:
    if direction is Direction.BELOW:
        return lambda block: (block.sum(axis=1) < gamma).astype(float)
    return lambda block: (block.sum(axis=1) > gamma).astype(float)
