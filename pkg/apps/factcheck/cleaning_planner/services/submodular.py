"""Curvature-aware MinVar solver.

Cleaning T is recast as choosing the objects S = O - T left dirty: EVar(O - S) is
non-decreasing and submodular in S, and the budget becomes a cover constraint
sum_{i in S} c_i >= sum_i c_i - C. Each round replaces it with a modular upper bound that is
tight at the incumbent and minimizes that bound with a knapsack oracle.
"""

import logging
from dataclasses import replace
from typing import FrozenSet, List, Optional

import numpy as np

from ..models.distributions import Dataset
from ..models.plan import CleaningPlan, PlanFlag, build_plan
from ..models.query import QueryFunction
from ..utils.errors import CurvatureUndefinedError, NonIntegerCostError
from .evar import EVarEvaluator, TrackedEvaluator, curvature
from .knapsack import knapsack_exact, knapsack_fptas

log = logging.getLogger(__name__)

MAX_ROUNDS = 50
RELATIVE_TOLERANCE = 1e-9
ORACLE_EPSILON = 0.01


def _bound_weights(
    evaluator: TrackedEvaluator, dirty: FrozenSet[int], singles: np.ndarray, n: int
) -> np.ndarray:
    """Per-object weights of the modular upper bound tight at ``dirty``.

    Objects already left dirty weigh what cleaning them would save from the incumbent;
    the others weigh EVar(O - {j}).
    """
    cleaned = [i for i in range(n) if i not in dirty]
    weights = singles.copy()
    for j in dirty:
        weights[j] = evaluator.marginal_gain(cleaned, j)
    return np.maximum(weights, 0.0)


def _oracle(weights: np.ndarray, costs: np.ndarray, budget: float, ids) -> CleaningPlan:
    try:
        return knapsack_exact(weights, costs, budget, ids, "best")
    except NonIntegerCostError:
        return knapsack_fptas(weights, costs, budget, ORACLE_EPSILON, ids, "best")


def submodular_best(
    query: QueryFunction,
    dataset: Dataset,
    budget: float,
    evaluator: Optional[EVarEvaluator] = None,
    max_rounds: int = MAX_ROUNDS,
) -> CleaningPlan:
    """MinVar plan by iterated modular upper bounds on the complement objective.

    Args:
        query: Query function, typically a quality measure
        dataset: Independent dataset
        budget: Total budget
        evaluator: Shared EVar oracle; a fresh one is created when omitted
        max_rounds: Round limit

    Returns:
        CleaningPlan with its EVar as objective value, annotated with the curvature and
        the approximation guarantee it implies
    """
    if budget < 0:
        raise ValueError(f"budget must be >= 0, got {budget}")
    evaluator = (evaluator or EVarEvaluator(query, dataset)).tracked()
    n = len(dataset)
    costs = dataset.costs
    everything = frozenset(range(n))

    if budget >= dataset.total_cost:
        plan = build_plan(
            list(range(n)), [0.0] * n, costs, dataset.ids, evaluator.evaluate(everything), "best"
        )
        return _annotate(plan, query, dataset, evaluator)

    singles = np.array([evaluator.evaluate(everything - {j}) for j in range(n)])
    dirty: FrozenSet[int] = frozenset()
    best: Optional[CleaningPlan] = None
    best_value = 0.0
    for round_number in range(1, max_rounds + 1):
        weights = _bound_weights(evaluator, dirty, singles, n)
        candidate = _oracle(weights, costs, budget, dataset.ids)
        cleaned = frozenset(dataset.resolve(candidate.chosen))
        value = evaluator.evaluate(cleaned)
        log.debug(f"best: round {round_number}, EVar {value:.6g}, cleaned {len(cleaned)}")

        improved = best is None or value < best_value - RELATIVE_TOLERANCE * abs(best_value)
        if improved:
            best, best_value = candidate.with_objective(value), value
        next_dirty = everything - cleaned
        if not improved or next_dirty == dirty:
            break
        dirty = next_dirty

    assert best is not None
    if evaluator.approximate:
        best = best.with_objective(best.objective_value, True)
    log.info(
        f"best: budget {budget:.6g}, cleaned {best.size} objects, EVar {best.objective_value:.6g}"
    )
    return _annotate(best, query, dataset, evaluator)


def _annotate(
    plan: CleaningPlan, query: QueryFunction, dataset: Dataset, evaluator: TrackedEvaluator
) -> CleaningPlan:
    try:
        report = curvature(query, dataset, evaluator.evaluate)
    except CurvatureUndefinedError:
        return replace(plan, guarantee="curvature undefined")
    flags: List[PlanFlag] = list(plan.flags)
    if report.weak_guarantee:
        guarantee = "curvature 1: no constant-factor guarantee"
        flags.append(PlanFlag.WEAK_GUARANTEE)
    else:
        guarantee = f"within {1.0 / (1.0 - report.kappa):.4g}x of optimal EVar"
    return replace(plan, curvature=report.kappa, guarantee=guarantee, flags=flags)
