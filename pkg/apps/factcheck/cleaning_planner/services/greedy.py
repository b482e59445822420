"""Greedy cleaning planners.

This module provides the benefit-per-cost greedy template with its final singleton check and
the benefit functions that turn it into GreedyNaive, GreedyMinVar, GreedyMaxPr and GreedyDep,
plus the random baseline.
"""

import logging
import math
from abc import ABC, abstractmethod
from enum import Enum
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..models.distributions import DEFAULT_ENUMERATION_CAP, Dataset
from ..models.plan import CleaningPlan, PlanFlag, PlanStep
from ..models.query import QueryFunction
from ..utils.errors import MissingCovarianceError
from ..utils.streams import philox, stream_key
from .evar import EVarEvaluator, TrackedEvaluator
from .maxpr import maxpr_value

log = logging.getLogger(__name__)

EXACT_SUM_BAND = 1e-9


class BenefitKind(str, Enum):
    """Benefit estimators for the greedy template."""

    NAIVE = "naive"
    COST_BLIND_NAIVE = "cost-blind-naive"
    MINVAR = "minvar"
    MAXPR = "maxpr"
    DEP = "dep"
    FIXED = "fixed"


class BenefitFunction(ABC):
    """Benefit of cleaning one more object given the objects already chosen."""

    kind: BenefitKind = BenefitKind.FIXED
    adaptive: bool = True
    cost_blind: bool = False
    stop_when_negative: bool = False

    @property
    def approximate(self) -> bool:
        return False

    @abstractmethod
    def __call__(self, index: int, chosen: Sequence[int]) -> float:
        """Benefit of adding ``index`` to ``chosen``."""


class FixedBenefit(BenefitFunction):
    """Benefits that do not depend on the current plan."""

    adaptive = False

    def __init__(
        self,
        values: Sequence[float],
        kind: BenefitKind = BenefitKind.FIXED,
        cost_blind: bool = False,
    ) -> None:
        self.values = np.asarray(values, dtype=float)
        self.kind = kind
        self.cost_blind = cost_blind

    def __call__(self, index: int, chosen: Sequence[int]) -> float:
        return float(self.values[index])


class NaiveBenefit(FixedBenefit):
    """Variance of each object the query reads; zero for the others."""

    def __init__(self, query: QueryFunction, dataset: Dataset, cost_blind: bool = False) -> None:
        scope = set(query.scope)
        values = [v if i in scope else 0.0 for i, v in enumerate(dataset.variances)]
        kind = BenefitKind.COST_BLIND_NAIVE if cost_blind else BenefitKind.NAIVE
        super().__init__(values, kind, cost_blind)


class MinVarBenefit(BenefitFunction):
    """Decrease of EVar from cleaning one more object."""

    kind = BenefitKind.MINVAR

    def __init__(self, evaluator: TrackedEvaluator) -> None:
        self.evaluator = evaluator

    @property
    def approximate(self) -> bool:
        return self.evaluator.approximate

    def __call__(self, index: int, chosen: Sequence[int]) -> float:
        return self.evaluator.marginal_gain(chosen, index)


class MaxPrBenefit(BenefitFunction):
    """Increase of the deviation probability from cleaning one more object."""

    kind = BenefitKind.MAXPR
    stop_when_negative = True

    def __init__(
        self,
        query: QueryFunction,
        dataset: Dataset,
        tau: float,
        cap: int = DEFAULT_ENUMERATION_CAP,
    ) -> None:
        self.query = query
        self.dataset = dataset
        self.tau = tau
        self.cap = cap
        self._values: Dict[Tuple[int, ...], float] = {}

    def value(self, chosen: Sequence[int]) -> float:
        key = tuple(sorted(chosen))
        if key not in self._values:
            self._values[key] = maxpr_value(self.query, self.dataset, key, self.tau, self.cap)
        return self._values[key]

    def __call__(self, index: int, chosen: Sequence[int]) -> float:
        return self.value([*chosen, index]) - self.value(chosen)


class DependencyBenefit(BenefitFunction):
    """Exact decrease of sum_{i,j not in T} a_i a_j Cov(X_i, X_j) from cleaning one object."""

    kind = BenefitKind.DEP

    def __init__(self, weights: Sequence[float], covariance: np.ndarray) -> None:
        self.weights = np.asarray(weights, dtype=float)
        self.covariance = np.asarray(covariance, dtype=float)

    def __call__(self, index: int, chosen: Sequence[int]) -> float:
        taken = set(chosen)
        hidden = [j for j in range(len(self.weights)) if j not in taken]
        a = self.weights
        cross = 2.0 * a[index] * float(self.covariance[index, hidden] @ a[hidden])
        return cross - a[index] ** 2 * self.covariance[index, index]


def _affordable(taken: Sequence[float], spent: float, cost: float, budget: float) -> bool:
    """Whether the exactly summed cost of ``taken`` plus ``cost`` stays within ``budget``."""
    total = spent + cost
    if abs(total - budget) > EXACT_SUM_BAND * max(1.0, abs(budget)):
        return total < budget
    return math.fsum([*taken, cost]) <= budget


def greedy(
    benefit: BenefitFunction,
    costs: Sequence[float],
    budget: float,
    ids: Optional[Sequence[str]] = None,
    algorithm: str = "greedy",
) -> CleaningPlan:
    """Benefit-per-cost greedy with the final singleton check.

    Repeatedly cleans the affordable object with the largest benefit/cost ratio (benefit
    alone when cost-blind), lowest index first on ties. Afterwards, if some unchosen
    affordable object is worth more on its own than everything chosen, the plan becomes
    that single object.

    Args:
        benefit: Benefit function
        costs: Cleaning cost per object
        budget: Total budget, >= 0
        ids: Object ids for the plan; positions are used when omitted
        algorithm: Name recorded in the plan

    Returns:
        CleaningPlan whose objective value is the summed benefit
    """
    if budget < 0:
        raise ValueError(f"budget must be >= 0, got {budget}")
    costs = np.asarray(costs, dtype=float)
    n = len(costs)
    ids = list(ids) if ids is not None else [str(i) for i in range(n)]
    fixed = None if benefit.adaptive else [benefit(i, []) for i in range(n)]

    def ratio(index: int, value: float) -> float:
        return value if benefit.cost_blind else value / costs[index]

    chosen: List[int] = []
    gains: List[float] = []
    taken: List[float] = []
    spent = 0.0
    while True:
        best, best_value, best_ratio = None, 0.0, -math.inf
        for i in range(n):
            if i in chosen or not _affordable(taken, spent, costs[i], budget):
                continue
            value = fixed[i] if fixed is not None else benefit(i, chosen)
            if ratio(i, value) > best_ratio:
                best, best_value, best_ratio = i, value, ratio(i, value)
        if best is None:
            break
        if benefit.stop_when_negative and best_value < 0:
            log.debug(f"{algorithm}: best benefit {best_value:.6g} is negative, stopping")
            break
        chosen.append(best)
        gains.append(best_value)
        taken.append(float(costs[best]))
        spent = math.fsum(taken)
        log.debug(f"{algorithm}: chose {ids[best]} (benefit {best_value:.6g}, spent {spent:.6g})")

    flags: List[PlanFlag] = []
    total = math.fsum(gains)
    single, single_value = None, -math.inf
    for i in range(n):
        if i in chosen or not _affordable([], 0.0, costs[i], budget):
            continue
        value = fixed[i] if fixed is not None else benefit(i, [])
        if value > single_value:
            single, single_value = i, value
    if single is not None and single_value > total:
        log.debug(f"{algorithm}: singleton {ids[single]} beats the greedy set")
        chosen, gains, total = [single], [single_value], single_value
        flags.append(PlanFlag.SINGLETON)

    if benefit.approximate:
        flags.append(PlanFlag.APPROXIMATE_BENEFIT)
    return CleaningPlan(
        chosen=[ids[i] for i in chosen],
        total_cost=float(math.fsum(costs[chosen])),
        objective_value=total,
        algorithm=algorithm,
        approximate=benefit.approximate,
        trace=[PlanStep(ids[i], g, float(costs[i])) for i, g in zip(chosen, gains)],
        flags=flags,
    )


def greedy_naive(
    query: QueryFunction,
    dataset: Dataset,
    budget: float,
    cost_blind: bool = False,
    objective: Optional[Callable[[Sequence[str]], float]] = None,
) -> CleaningPlan:
    """Clean the objects with the largest value variance per unit cost."""
    algorithm = "naive-costblind" if cost_blind else "naive"
    plan = greedy(
        NaiveBenefit(query, dataset, cost_blind), dataset.costs, budget, dataset.ids, algorithm
    )
    evaluate = objective or EVarEvaluator(query, dataset, mc_fallback=False).evaluate
    return plan.with_objective(evaluate(plan.chosen))


def greedy_minvar(
    query: QueryFunction,
    dataset: Dataset,
    budget: float,
    evaluator: Optional[EVarEvaluator] = None,
    modular_shortcut: bool = True,
) -> CleaningPlan:
    """Greedy on the EVar decrease, recomputed against the current plan each round.

    For a linear query under independence the decrease a_i^2 Var(X_i) does not depend on the
    plan and is computed once.

    Args:
        query: Query function
        dataset: Dataset
        budget: Total budget
        evaluator: Shared EVar oracle; a fresh one is created when omitted
        modular_shortcut: Use the plan-independent benefit for linear queries

    Returns:
        CleaningPlan with its EVar as objective value
    """
    tracked = (evaluator or EVarEvaluator(query, dataset)).tracked()
    weights = query.linear_form()
    benefit: BenefitFunction
    if modular_shortcut and weights is not None and dataset.is_independent:
        benefit = FixedBenefit(weights * weights * dataset.variances, BenefitKind.MINVAR)
    else:
        benefit = MinVarBenefit(tracked)
    plan = greedy(benefit, dataset.costs, budget, dataset.ids, "greedy-minvar")
    value = tracked.evaluate(plan.chosen)
    log.info(
        f"greedy-minvar: budget {budget:.6g}, cleaned {plan.size} objects, EVar {value:.6g}"
    )
    return plan.with_objective(value, plan.approximate or tracked.approximate)


def greedy_maxpr(
    query: QueryFunction,
    dataset: Dataset,
    budget: float,
    tau: float,
    cap: int = DEFAULT_ENUMERATION_CAP,
) -> CleaningPlan:
    """Greedy on the deviation-probability increase; stops once cleaning would lower it."""
    benefit = MaxPrBenefit(query, dataset, tau, cap)
    plan = greedy(benefit, dataset.costs, budget, dataset.ids, "greedy-maxpr")
    value = benefit.value(dataset.resolve(plan.chosen))
    log.info(f"greedy-maxpr: budget {budget:.6g}, cleaned {plan.size} objects, MaxPr {value:.6g}")
    return plan.with_objective(value)


def residual_variance(
    weights: Sequence[float], covariance: np.ndarray, chosen: Sequence[int]
) -> float:
    """sum_{i,j not in T} a_i a_j Cov(X_i, X_j)."""
    taken = set(chosen)
    hidden = [j for j in range(len(weights)) if j not in taken]
    a = np.asarray(weights, dtype=float)[hidden]
    return float(max(a @ np.asarray(covariance)[np.ix_(hidden, hidden)] @ a, 0.0))


def greedy_dep(
    weights: Sequence[float],
    covariance: Optional[np.ndarray],
    costs: Sequence[float],
    budget: float,
    ids: Optional[Sequence[str]] = None,
) -> CleaningPlan:
    """Greedy on the exact residual-variance decrease under a covariance model."""
    if covariance is None:
        raise MissingCovarianceError("dependency-aware greedy needs a covariance matrix")
    plan = greedy(DependencyBenefit(weights, covariance), costs, budget, ids, "greedy-dep")
    positions = [int(i) for i in plan.chosen] if ids is None else [
        list(ids).index(obj_id) for obj_id in plan.chosen
    ]
    return plan.with_objective(residual_variance(weights, covariance, positions))


def random_plan(
    costs: Sequence[float],
    budget: float,
    seed: int,
    ids: Optional[Sequence[str]] = None,
    run: int = 0,
) -> CleaningPlan:
    """Visit objects in a seeded random order, cleaning each one that still fits.

    Each ``run`` has its own stream, so repeated runs under one seed are independent.
    """
    costs = np.asarray(costs, dtype=float)
    ids = list(ids) if ids is not None else [str(i) for i in range(len(costs))]
    order = philox(seed, stream_key("random-plan"), run).permutation(len(costs))
    chosen: List[int] = []
    taken: List[float] = []
    spent = 0.0
    for i in order:
        if _affordable(taken, spent, costs[i], budget):
            chosen.append(int(i))
            taken.append(float(costs[i]))
            spent = math.fsum(taken)
    return CleaningPlan(
        chosen=[ids[i] for i in chosen],
        total_cost=float(math.fsum(costs[chosen])),
        objective_value=math.nan,
        algorithm="random",
        trace=[PlanStep(ids[i], 0.0, float(costs[i])) for i in chosen],
    )
