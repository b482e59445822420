"""Claim functions and claim systems.

A claim is a numeric query over object values. Every claim type here is a linear aggregate,
so each exposes its linear form alongside a vectorized evaluator.
"""

import logging
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from ..utils.errors import InsufficientRangeError, MissingValueError, ValidationError

log = logging.getLogger(__name__)

SENSIBILITY_TOLERANCE = 1e-12


class Direction(str, Enum):
    """Which way a claim is strengthened."""

    ABOVE = "above"  # larger values strengthen the claim
    BELOW = "below"  # smaller values strengthen the claim ("as low as")


class Claim(ABC):
    """Base class for claim functions."""

    offset: float = 0.0

    @property
    @abstractmethod
    def min_size(self) -> int:
        """Smallest dataset size the claim fits in."""

    @abstractmethod
    def linear_form(self, n: int) -> np.ndarray:
        """Coefficient vector of length ``n``."""

    def scope(self, n: int) -> Tuple[int, ...]:
        return tuple(int(i) for i in np.flatnonzero(self.linear_form(n)))

    def evaluate_many(self, values: np.ndarray) -> np.ndarray:
        """Evaluate on each row of a (K, n) full-assignment matrix."""
        values = np.atleast_2d(np.asarray(values, dtype=float))
        return values @ self.linear_form(values.shape[1]) + self.offset


@dataclass(frozen=True)
class LinearClaim(Claim):
    """offset + sum_i a_i x_i."""

    weights: Tuple[float, ...]
    offset: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))

    @property
    def min_size(self) -> int:
        return len(self.weights)

    def linear_form(self, n: int) -> np.ndarray:
        if n != len(self.weights):
            raise ValidationError(f"linear claim has {len(self.weights)} weights for {n} objects")
        return np.asarray(self.weights, dtype=float)


@dataclass(frozen=True)
class WindowAggregateClaim(Claim):
    """Sum over the right window minus sum over the left window.

    Positions are 0-based; windows may overlap.
    """

    left: int
    right: int
    window: int

    def __post_init__(self) -> None:
        if self.window < 1:
            raise ValidationError(f"window width must be >= 1, got {self.window}")

    @property
    def min_size(self) -> int:
        return max(self.left, self.right) + self.window

    @property
    def end(self) -> int:
        return max(self.left, self.right) + self.window - 1

    def fits(self, n: int) -> bool:
        return min(self.left, self.right) >= 0 and self.min_size <= n

    def shifted(self, steps: int) -> "WindowAggregateClaim":
        return WindowAggregateClaim(self.left + steps, self.right + steps, self.window)

    def linear_form(self, n: int) -> np.ndarray:
        if not self.fits(n):
            raise InsufficientRangeError(f"{self} does not fit in {n} objects")
        form = np.zeros(n)
        form[self.left : self.left + self.window] -= 1.0
        form[self.right : self.right + self.window] += 1.0
        return form


@dataclass(frozen=True)
class ThresholdClaim(Claim):
    """A claim that the sum over ``members`` is as low (or as high) as ``threshold``.

    The claim function is the aggregate; the threshold only matters to quality measures.
    """

    members: Tuple[int, ...]
    threshold: Optional[float] = None
    direction: Direction = Direction.BELOW

    def __post_init__(self) -> None:
        members = tuple(sorted({int(i) for i in self.members}))
        if not members:
            raise ValidationError("threshold claim needs at least one member")
        object.__setattr__(self, "members", members)
        object.__setattr__(self, "direction", Direction(self.direction))

    @property
    def min_size(self) -> int:
        return self.members[-1] + 1

    def linear_form(self, n: int) -> np.ndarray:
        if self.min_size > n:
            raise InsufficientRangeError(f"threshold claim members exceed {n} objects")
        form = np.zeros(n)
        form[list(self.members)] = 1.0
        return form

    def with_threshold(self, threshold: float) -> "ThresholdClaim":
        return ThresholdClaim(self.members, threshold, self.direction)


@dataclass(frozen=True)
class ClaimSystem:
    """Original claim, its perturbations and their sensibilities."""

    original: Claim
    perturbations: Tuple[Claim, ...]
    sensibilities: Tuple[float, ...]
    delta: str = "subtract"
    direction: Direction = Direction.ABOVE

    def __post_init__(self) -> None:
        object.__setattr__(self, "perturbations", tuple(self.perturbations))
        object.__setattr__(self, "sensibilities", tuple(float(s) for s in self.sensibilities))
        object.__setattr__(self, "direction", Direction(self.direction))
        if self.delta != "subtract":
            raise ValidationError(f"unsupported relative strength '{self.delta}'")
        if not self.perturbations:
            raise ValidationError("claim system needs at least one perturbation")
        if len(self.perturbations) != len(self.sensibilities):
            raise ValidationError(
                f"{len(self.perturbations)} perturbations but "
                f"{len(self.sensibilities)} sensibilities"
            )
        if any(s < 0 for s in self.sensibilities):
            raise ValidationError("sensibilities must be nonnegative")
        total = math.fsum(self.sensibilities)
        if abs(total - 1.0) > SENSIBILITY_TOLERANCE:
            raise ValidationError(f"sensibilities sum to {total}, expected 1")

    @classmethod
    def build(
        cls,
        original: Claim,
        perturbations: Sequence[Claim],
        sensibilities: Optional[Sequence[float]] = None,
        direction: Optional[Direction] = None,
    ) -> "ClaimSystem":
        """Build a system, renormalizing sensibilities when needed.

        Args:
            original: The claim under check
            perturbations: Related claims
            sensibilities: Weights per perturbation; uniform when omitted
            direction: Strength direction; taken from a threshold original when omitted

        Returns:
            ClaimSystem object
        """
        if sensibilities is None:
            weights = [1.0 / len(perturbations)] * len(perturbations) if perturbations else []
        else:
            weights = [float(s) for s in sensibilities]
            total = math.fsum(weights)
            if weights and total > 0 and abs(total - 1.0) > SENSIBILITY_TOLERANCE:
                log.warning(f"Sensibilities sum to {total:.6g}; normalizing to 1")
                weights = [w / total for w in weights]
        if direction is None:
            direction = (
                original.direction if isinstance(original, ThresholdClaim) else Direction.ABOVE
            )
        return cls(original, tuple(perturbations), tuple(weights), direction=direction)

    @property
    def m(self) -> int:
        return len(self.perturbations)

    @property
    def includes_original(self) -> bool:
        return self.original in self.perturbations

    def prune(self, keep: Iterable[int]) -> "ClaimSystem":
        """Keep the perturbations at the given positions, renormalizing sensibilities."""
        indices = sorted(set(keep))
        weights = [self.sensibilities[k] for k in indices]
        total = math.fsum(weights)
        if total <= 0:
            weights = [1.0] * len(indices)
            total = float(len(indices))
        return ClaimSystem(
            self.original,
            tuple(self.perturbations[k] for k in indices),
            tuple(w / total for w in weights),
            self.delta,
            self.direction,
        )


def relative_strength(x: float, y: float) -> float:
    """Subtractive relative strength; positive means ``x`` strengthens relative to ``y``."""
    return x - y


def evaluate_claim(
    claim: Claim,
    values: Union[Sequence[float], Mapping[int, float], np.ndarray],
    ids: Optional[Sequence[str]] = None,
) -> float:
    """Evaluate a claim on a full assignment.

    Args:
        claim: Claim function
        values: Value per object position, as a sequence or a position mapping
        ids: Optional object ids used to name missing values

    Returns:
        Claim value

    Raises:
        MissingValueError: If a referenced object has no value
    """
    if isinstance(values, Mapping):
        n = max([claim.min_size] + [int(k) + 1 for k in values])
        vector = np.full(n, np.nan)
        for position, value in values.items():
            vector[int(position)] = value
    else:
        vector = np.asarray(values, dtype=float)
        if vector.shape[0] < claim.min_size:
            vector = np.concatenate([vector, np.full(claim.min_size - vector.shape[0], np.nan)])

    form = claim.linear_form(vector.shape[0])
    missing = [i for i in np.flatnonzero(form) if np.isnan(vector[i])]
    if missing:
        raise MissingValueError(ids[i] if ids else str(i) for i in missing)
    referenced = form != 0
    return float(form[referenced] @ vector[referenced] + claim.offset)


def window_perturbations(
    spec: WindowAggregateClaim,
    n: int,
    count: Optional[int] = None,
    include_original: bool = False,
) -> List[WindowAggregateClaim]:
    """Shift a window claim through time.

    Args:
        spec: Original window claim
        n: Number of objects (time points)
        count: Number of perturbations; the shifts closest to the original are kept.
            None keeps every shift that fits
        include_original: Keep the unshifted claim among the perturbations

    Returns:
        Same-shape claims ordered by increasing end position

    Raises:
        InsufficientRangeError: If fewer than ``count`` shifts fit
    """
    if not spec.fits(n):
        raise InsufficientRangeError(f"{spec} does not fit in {n} objects")
    lowest = -min(spec.left, spec.right)
    highest = n - spec.min_size
    shifts = [d for d in range(lowest, highest + 1) if include_original or d != 0]

    if count is not None:
        if count > len(shifts):
            raise InsufficientRangeError(
                f"only {len(shifts)} shifted windows fit in {n} objects, {count} requested"
            )
        shifts = sorted(shifts, key=lambda d: (abs(d), d))[:count]
    return [spec.shifted(d) for d in sorted(shifts)]


def window_distance(first: WindowAggregateClaim, second: WindowAggregateClaim) -> int:
    """Index steps between the two claims' window ends."""
    return abs(first.end - second.end)


def sensibility_exp_decay(distances: Sequence[float], rate: float) -> List[float]:
    """Sensibilities decaying exponentially with distance from the original claim."""
    if not distances:
        raise ValueError("distances must be nonempty")
    d = np.asarray(distances, dtype=float)
    weights = np.exp(-rate * (d - d.min()))
    return list(weights / weights.sum())


def window_claim_system(
    original: WindowAggregateClaim,
    n: int,
    count: Optional[int] = None,
    rate: float = 1.5,
    include_original: bool = False,
) -> ClaimSystem:
    """Claim system of time-shifted perturbations weighted by exponential decay."""
    perturbations = window_perturbations(original, n, count, include_original)
    if not perturbations:
        raise InsufficientRangeError("window claim system needs at least one perturbation")
    distances = [window_distance(original, q) for q in perturbations]
    return ClaimSystem.build(original, perturbations, sensibility_exp_decay(distances, rate))


def disjoint_window_claims(
    n: int, window: int, threshold: float, direction: Direction = Direction.BELOW
) -> ClaimSystem:
    """Threshold claims over consecutive disjoint windows, uniformly weighted.

    The last window is the original claim and also counts among the perturbations.
    """
    count = n // window
    if count < 1:
        raise InsufficientRangeError(f"window {window} does not fit in {n} objects")
    claims = [
        ThresholdClaim(tuple(range(k * window, (k + 1) * window)), threshold, direction)
        for k in range(count)
    ]
    return ClaimSystem.build(claims[-1], claims, direction=direction)
