"""Knapsack solvers and the modular reductions built on them.

For a linear query over independent objects both objectives are modular: cleaning object i
removes a_i^2 Var(X_i) from the residual variance, and for centered normals it adds the same
amount to the spread S that drives the deviation probability Phi(-tau / sqrt(S)).
"""

import logging
import math
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.stats import norm

from ..models.distributions import Dataset, NormalSpec
from ..models.plan import CleaningPlan, PlanFlag, build_plan
from ..models.query import QueryFunction
from ..utils.errors import NonIntegerCostError, NonLinearQueryError, NonNormalDatasetError
from .maxpr import MEANINGFUL_PROBABILITY

log = logging.getLogger(__name__)

INTEGER_TOLERANCE = 1e-9
MAXPR_EPSILON = 0.75


def _integer_costs(costs: np.ndarray) -> np.ndarray:
    rounded = np.rint(costs)
    if np.any(np.abs(costs - rounded) > INTEGER_TOLERANCE) or np.any(rounded < 0):
        raise NonIntegerCostError(
            "the exact knapsack needs non-negative integer costs; "
            "use the FPTAS or scale the costs first"
        )
    return rounded.astype(np.int64)


def _budget_units(budget: float) -> int:
    if budget < 0:
        raise ValueError(f"budget must be >= 0, got {budget}")
    return int(math.floor(budget + INTEGER_TOLERANCE * max(1.0, budget)))


def scale_costs(
    costs: Sequence[float], budget: float, resolution: float = 1.0
) -> Tuple[np.ndarray, int]:
    """Round costs up and the budget down to integer multiples of ``resolution``.

    Every plan feasible under the scaled costs is feasible under the original ones.

    Returns:
        Tuple of (integer costs, integer budget) in units of ``resolution``
    """
    if resolution <= 0:
        raise ValueError(f"resolution must be > 0, got {resolution}")
    units = np.asarray(costs, dtype=float) / resolution
    scaled = np.ceil(units - INTEGER_TOLERANCE).astype(np.int64)
    return scaled, _budget_units(budget / resolution)


def knapsack_exact(
    values: Sequence[float],
    costs: Sequence[float],
    budget: float,
    ids: Optional[Sequence[str]] = None,
    algorithm: str = "optimum",
) -> CleaningPlan:
    """Max-value knapsack by dynamic programming over integer budgets.

    An item is only taken when it strictly improves the best value, so ties keep the
    lower-index solution.

    Args:
        values: Item values
        costs: Non-negative integer item costs
        budget: Budget; the fractional part is ignored
        ids: Object ids for the plan
        algorithm: Name recorded in the plan

    Returns:
        CleaningPlan whose objective value is the collected value

    Raises:
        NonIntegerCostError: If a cost is not an integer
    """
    values = np.asarray(values, dtype=float)
    raw_costs = np.asarray(costs, dtype=float)
    weights = _integer_costs(raw_costs)
    capacity = _budget_units(budget)
    n = len(values)

    best = np.zeros(capacity + 1)
    taken = np.zeros((n, capacity + 1), dtype=bool)
    for i in range(n):
        c = int(weights[i])
        if c > capacity:
            continue
        candidate = np.full(capacity + 1, -np.inf)
        candidate[c:] = best[: capacity + 1 - c] + values[i]
        taken[i] = candidate > best
        best = np.where(taken[i], candidate, best)

    chosen: List[int] = []
    remaining = capacity
    for i in range(n - 1, -1, -1):
        if taken[i, remaining]:
            chosen.append(i)
            remaining -= int(weights[i])
    chosen.reverse()
    log.debug(f"{algorithm}: DP over {n} items and capacity {capacity} chose {len(chosen)}")
    return build_plan(
        chosen,
        values[chosen],
        raw_costs,
        ids,
        float(math.fsum(values[chosen])),
        algorithm,
    )


def knapsack_fptas(
    values: Sequence[float],
    costs: Sequence[float],
    budget: float,
    epsilon: float,
    ids: Optional[Sequence[str]] = None,
    algorithm: str = "fptas",
) -> CleaningPlan:
    """(1 - epsilon)-approximate max-value knapsack for arbitrary positive costs.

    Items that cannot fit or carry no value are dropped; the rest have their values rounded
    down to multiples of epsilon * v_max / m and a min-cost DP runs over the scaled values.
    """
    if not 0.0 < epsilon < 1.0:
        raise ValueError(f"epsilon must lie in (0, 1), got {epsilon}")
    if budget < 0:
        raise ValueError(f"budget must be >= 0, got {budget}")
    values = np.asarray(values, dtype=float)
    costs = np.asarray(costs, dtype=float)
    limit = budget + INTEGER_TOLERANCE * max(1.0, budget)
    items = [i for i in range(len(values)) if costs[i] <= limit and values[i] > 0]
    if not items:
        return build_plan([], [], costs, ids, 0.0, algorithm)

    scale = epsilon * float(values[items].max()) / len(items)
    scaled = np.floor(values[items] / scale).astype(np.int64)
    total = int(scaled.sum())

    cheapest = np.full(total + 1, np.inf)
    cheapest[0] = 0.0
    taken = np.zeros((len(items), total + 1), dtype=bool)
    for k, i in enumerate(items):
        v = int(scaled[k])
        candidate = np.full(total + 1, np.inf)
        candidate[v:] = cheapest[: total + 1 - v] + costs[i]
        taken[k] = candidate < cheapest
        cheapest = np.where(taken[k], candidate, cheapest)

    level = int(np.flatnonzero(cheapest <= limit).max())
    chosen: List[int] = []
    for k in range(len(items) - 1, -1, -1):
        if taken[k, level]:
            chosen.append(items[k])
            level -= int(scaled[k])
    chosen.reverse()
    log.debug(f"{algorithm}: epsilon {epsilon}, {len(items)} candidate items, chose {len(chosen)}")
    return build_plan(
        chosen, values[chosen], costs, ids, float(math.fsum(values[chosen])), algorithm
    )


def modular_minvar_exact(
    weights: Sequence[float],
    costs: Sequence[float],
    budget: float,
    ids: Optional[Sequence[str]] = None,
) -> CleaningPlan:
    """Optimal plan for a modular residual variance sum_i w_i, with w_i = a_i^2 Var(X_i).

    The objective value of the returned plan is the residual variance left after cleaning.
    """
    weights = np.asarray(weights, dtype=float)
    plan = knapsack_exact(weights, costs, budget, ids, "optimum")
    residual = max(math.fsum(weights) - plan.objective_value, 0.0)
    return plan.with_objective(residual)


def deviation_probability(spread: float, tau: float) -> float:
    """Phi(-tau / sqrt(S)); zero when nothing uncertain is revealed."""
    if spread <= 0.0:
        return 0.0
    return float(norm.cdf(-tau / math.sqrt(spread)))


def modular_maxpr(
    weights: Sequence[float],
    costs: Sequence[float],
    budget: float,
    tau: float,
    epsilon: Optional[float] = None,
    ids: Optional[Sequence[str]] = None,
) -> CleaningPlan:
    """Plan maximizing Phi(-tau / sqrt(S)), S = sum of a_i^2 sigma_i^2 over cleaned objects.

    Uses the exact DP for integer costs unless ``epsilon`` is given, and the FPTAS with
    ``epsilon`` (default 3/4) otherwise. Plans whose probability is under 0.05 are flagged.
    """
    if tau < 0:
        raise ValueError(f"tau must be >= 0, got {tau}")
    weights = np.asarray(weights, dtype=float)
    costs = np.asarray(costs, dtype=float)
    plan: Optional[CleaningPlan] = None
    if epsilon is None:
        try:
            plan = knapsack_exact(weights, costs, budget, ids, "optimum-maxpr")
        except NonIntegerCostError:
            log.info("Non-integer costs, using the FPTAS for MaxPr")
    if plan is None:
        plan = knapsack_fptas(weights, costs, budget, epsilon or MAXPR_EPSILON, ids, "fptas")

    probability = deviation_probability(plan.objective_value, tau)
    plan = plan.with_objective(probability)
    if probability < MEANINGFUL_PROBABILITY:
        log.warning(
            f"Best deviation probability {probability:.4g} is below {MEANINGFUL_PROBABILITY}"
        )
        plan = plan.with_flag(PlanFlag.BELOW_THRESHOLD)
    return plan


def modular_weights(query: QueryFunction, dataset: Dataset) -> np.ndarray:
    """a_i^2 Var(X_i) for a linear query."""
    weights = query.linear_form()
    if weights is None:
        raise NonLinearQueryError("modular solvers need a query with a linear form")
    return weights * weights * dataset.variances


def plan_modular_minvar(
    query: QueryFunction,
    dataset: Dataset,
    budget: float,
    epsilon: Optional[float] = None,
    cost_resolution: Optional[float] = None,
) -> CleaningPlan:
    """Modular MinVar on a dataset: exact DP, FPTAS when ``epsilon`` is set.

    ``cost_resolution`` rounds costs to integer units before the DP.
    """
    weights = modular_weights(query, dataset)
    if epsilon is not None:
        plan = knapsack_fptas(weights, dataset.costs, budget, epsilon, dataset.ids)
        return plan.with_objective(max(math.fsum(weights) - plan.objective_value, 0.0))
    if cost_resolution is None:
        return modular_minvar_exact(weights, dataset.costs, budget, dataset.ids)

    scaled, capacity = scale_costs(dataset.costs, budget, cost_resolution)
    plan = modular_minvar_exact(weights, scaled, capacity, dataset.ids)
    return _restore_costs(plan, dataset)


def plan_modular_maxpr(
    query: QueryFunction,
    dataset: Dataset,
    budget: float,
    tau: float,
    epsilon: Optional[float] = None,
    cost_resolution: Optional[float] = None,
) -> CleaningPlan:
    """Modular MaxPr on a dataset of normal objects centered at their current values."""
    off_center = [
        obj.id
        for obj in dataset.objects
        if not isinstance(obj.dist, NormalSpec)
        or not math.isclose(obj.dist.mean, obj.current_value, abs_tol=1e-12)
    ]
    if off_center:
        raise NonNormalDatasetError(
            f"modular MaxPr needs normal objects centered at their current values: "
            f"{', '.join(off_center[:5])}"
        )
    weights = modular_weights(query, dataset)
    if cost_resolution is None:
        return modular_maxpr(weights, dataset.costs, budget, tau, epsilon, dataset.ids)

    scaled, capacity = scale_costs(dataset.costs, budget, cost_resolution)
    plan = modular_maxpr(weights, scaled, capacity, tau, epsilon, dataset.ids)
    return _restore_costs(plan, dataset)


def _restore_costs(plan: CleaningPlan, dataset: Dataset) -> CleaningPlan:
    return build_plan(
        [dataset.index_of(obj_id) for obj_id in plan.chosen],
        [step.benefit for step in plan.trace],
        dataset.costs,
        dataset.ids,
        plan.objective_value,
        plan.algorithm,
        approximate=plan.approximate,
        flags=list(plan.flags),
    )
