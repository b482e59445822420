"""Cleaning plan models."""

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import List, Optional, Sequence

import pandas as pd

PLAN_COLUMNS = ["rank", "id", "cost", "benefit", "cumulative_cost"]


class PlanFlag(str, Enum):
    """Provenance notes attached to a plan."""

    BELOW_THRESHOLD = "below-threshold"  # deviation probability under 0.05
    WEAK_GUARANTEE = "weak-guarantee"  # curvature 1
    APPROXIMATE_BENEFIT = "approximate-benefit"  # Monte Carlo marginal gains
    SINGLETON = "singleton"  # final check replaced the greedy set


@dataclass(frozen=True)
class PlanStep:
    """One object added to a plan, with the benefit that justified it."""

    id: str
    benefit: float
    cost: float


@dataclass(frozen=True)
class CleaningPlan:
    """Objects selected for cleaning and the objective they achieve."""

    chosen: List[str]
    total_cost: float
    objective_value: float
    algorithm: str
    approximate: bool = False
    trace: List[PlanStep] = field(default_factory=list)
    flags: List[PlanFlag] = field(default_factory=list)
    curvature: Optional[float] = None
    guarantee: Optional[str] = None

    @property
    def size(self) -> int:
        return len(self.chosen)

    def with_objective(self, objective_value: float, approximate: Optional[bool] = None):
        return replace(
            self,
            objective_value=float(objective_value),
            approximate=self.approximate if approximate is None else approximate,
        )

    def with_flag(self, flag: PlanFlag) -> "CleaningPlan":
        if flag in self.flags:
            return self
        return replace(self, flags=[*self.flags, flag])

    def to_frame(self) -> pd.DataFrame:
        """Plan rows in cleaning order."""
        frame = pd.DataFrame(
            {
                "rank": range(1, len(self.trace) + 1),
                "id": [step.id for step in self.trace],
                "cost": [step.cost for step in self.trace],
                "benefit": [step.benefit for step in self.trace],
            }
        )
        frame["cumulative_cost"] = frame["cost"].cumsum()
        return frame[PLAN_COLUMNS]

    def footer(self) -> str:
        return (
            f"# objective={self.objective_value!r} algorithm={self.algorithm} "
            f"approximate={str(self.approximate).lower()}"
        )


def build_plan(
    positions: Sequence[int],
    benefits: Sequence[float],
    costs: Sequence[float],
    ids: Optional[Sequence[str]],
    objective_value: float,
    algorithm: str,
    **extra,
) -> CleaningPlan:
    """Plan over ``positions`` in the given order, one trace step per object."""
    ids = list(ids) if ids is not None else [str(i) for i in range(len(costs))]
    chosen_costs = [float(costs[i]) for i in positions]
    return CleaningPlan(
        chosen=[ids[i] for i in positions],
        total_cost=math.fsum(chosen_costs),
        objective_value=float(objective_value),
        algorithm=algorithm,
        trace=[
            PlanStep(ids[i], float(b), c) for i, b, c in zip(positions, benefits, chosen_costs)
        ],
        **extra,
    )
