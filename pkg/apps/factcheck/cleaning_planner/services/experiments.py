"""Experiment harness.

This module provides ingestion of dataset and claims files, budget sweeps over the solvers,
the reveal-the-truth simulation and the MinVar-versus-MaxPr comparison. Reported objective
values are always recomputed from the plan by the exact oracles, never taken from a solver's
own bookkeeping.
"""

import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from ..models.claims import ClaimSystem
from ..models.distributions import (
    DEFAULT_ENUMERATION_CAP,
    Dataset,
    NormalSpec,
    UncertainObject,
    condition,
    draw,
)
from ..models.plan import CleaningPlan
from ..models.query import QueryFunction
from ..utils.config import PlannerConfig
from ..utils.errors import NonLinearQueryError, PlannerError, ValidationError
from ..utils.io import read_claims, read_dataset
from ..utils.streams import philox, stream_key
from .evar import DEFAULT_MC_SAMPLES, EVarEvaluator, moments
from .exhaustive import bruteforce_opt
from .greedy import greedy_dep, greedy_maxpr, greedy_minvar, greedy_naive, random_plan
from .instrumentation import SolverMetrics
from .knapsack import plan_modular_maxpr, plan_modular_minvar
from .maxpr import TIE_TOLERANCE, maxpr_value
from .quality import MeasureKind, QualityMeasure
from .submodular import submodular_best

log = logging.getLogger(__name__)

ALGORITHMS = [
    "random",
    "naive-costblind",
    "naive",
    "greedy-minvar",
    "greedy-maxpr",
    "optimum",
    "fptas",
    "optimum-maxpr",
    "best",
    "greedy-dep",
    "opt",
]
SWEEP_COLUMNS = [
    "algorithm",
    "budget",
    "budget_fraction",
    "objective_value",
    "plan_size",
    "seconds",
]
SIMULATION_COLUMNS = [
    "algorithm",
    "budget",
    "budget_fraction",
    "posterior_mean",
    "posterior_std",
    "counter_found",
]
COMPARE_COLUMNS = ["budget", "plan", "residual_variance", "deviation_probability"]

_TRUTH_STREAM = stream_key("truth")
_RESAMPLE_STREAM = stream_key("resample-current")


class Objective(str, Enum):
    MINVAR = "minvar"
    MAXPR = "maxpr"


@dataclass(frozen=True)
class Instance:
    """A dataset with the query whose uncertainty cleaning should reduce."""

    dataset: Dataset
    query: QueryFunction
    system: Optional[ClaimSystem] = None
    tau: float = 0.0

    def rebased(self, dataset: Dataset) -> "Instance":
        """Same instance over another dataset; quality measures take its current values."""
        query = self.query
        if isinstance(query, QualityMeasure):
            query = QualityMeasure.build(query.kind, query.claim_system, dataset)
        return Instance(dataset, query, self.system, self.tau)


def objective_of(
    objective: Objective,
    query: QueryFunction,
    dataset: Dataset,
    chosen: Sequence[Union[str, int]],
    tau: float = 0.0,
    evaluator: Optional[EVarEvaluator] = None,
    cap: int = DEFAULT_ENUMERATION_CAP,
) -> float:
    """Exact objective of cleaning ``chosen``: EVar, or the deviation probability for MaxPr."""
    if Objective(objective) is Objective.MINVAR:
        evaluator = evaluator or EVarEvaluator(query, dataset, cap=cap, mc_fallback=False)
        return evaluator.evaluate(chosen)
    return maxpr_value(query, dataset, chosen, tau, cap)


def ingest(
    dataset_path: Union[str, Path],
    claims_path: Union[str, Path],
    measure: Union[MeasureKind, str] = MeasureKind.BIAS,
    covariance_path: Optional[Union[str, Path]] = None,
) -> Instance:
    """Parse and validate a dataset and its claims into a planning instance.

    Args:
        dataset_path: Dataset CSV
        claims_path: Claims JSON
        measure: Quality measure to plan for
        covariance_path: Optional covariance sidecar

    Returns:
        Instance whose query is the quality measure of the claim system
    """
    dataset = read_dataset(dataset_path, covariance_path)
    claims = read_claims(claims_path, dataset)
    query = QualityMeasure.build(measure, claims.system, dataset)
    log.info(
        f"Ingested {len(dataset)} objects and {claims.system.m} perturbations "
        f"({MeasureKind(measure).value})"
    )
    return Instance(dataset, query, claims.system, claims.tau or 0.0)


@dataclass
class SweepConfig:
    """Budget sweep over a set of algorithms.

    Budgets are explicit or ``budget_points`` evenly spaced values in [0, total cost].
    """

    algorithms: List[str]
    objective: Objective = Objective.MINVAR
    budgets: Optional[List[float]] = None
    budget_points: int = 101
    tau: Optional[float] = None
    seed: int = 0
    epsilon: float = 0.1
    cost_scale: Optional[float] = None
    random_runs: int = 100
    workers: int = 4
    enumeration_cap: int = DEFAULT_ENUMERATION_CAP
    mc_samples: int = DEFAULT_MC_SAMPLES
    mc_fallback: bool = True
    dataset_path: Optional[str] = None
    claims_path: Optional[str] = None
    covariance_path: Optional[str] = None
    measure: MeasureKind = MeasureKind.BIAS

    def __post_init__(self) -> None:
        self.objective = Objective(self.objective)
        self.measure = MeasureKind(self.measure)
        unknown = [a for a in self.algorithms if a not in ALGORITHMS]
        if unknown:
            raise ValidationError(f"unknown algorithms: {', '.join(unknown)}")
        if not self.algorithms:
            raise ValidationError("no algorithms selected")
        if self.budget_points < 1:
            raise ValidationError(f"budget_points must be >= 1, got {self.budget_points}")

    @classmethod
    def from_planner_config(cls, config: PlannerConfig, **fields_) -> "SweepConfig":
        """Sweep configuration with defaults taken from the planner configuration."""
        defaults = dict(
            seed=config.seed,
            epsilon=config.epsilon,
            cost_scale=config.cost_scale,
            random_runs=config.random_runs,
            workers=config.workers,
            budget_points=config.budget_points,
            enumeration_cap=config.enumeration_cap,
            mc_samples=config.mc_samples,
            mc_fallback=config.mc_fallback,
        )
        defaults.update({k: v for k, v in fields_.items() if v is not None})
        return cls(**defaults)

    def budget_grid(self, total_cost: float) -> List[float]:
        if self.budgets is None:
            return [float(b) for b in np.linspace(0.0, total_cost, self.budget_points)]
        limit = total_cost * (1.0 + 1e-9)
        bad = [b for b in self.budgets if not 0.0 <= b <= limit]
        if bad:
            raise ValidationError(f"budgets {bad} fall outside [0, {total_cost}]")
        return sorted(float(b) for b in self.budgets)


@dataclass
class SimulationConfig(SweepConfig):
    """Sweep whose plans are executed against hidden true values.

    ``truths`` pins the true value of some or all objects; the rest are drawn with
    ``truth_seed``.
    """

    truth_seed: int = 0
    repetitions: int = 100
    truths: Optional[Dict[str, float]] = None

    def __post_init__(self) -> None:
        super().__post_init__()
        if self.repetitions < 1:
            raise ValidationError(f"repetitions must be >= 1, got {self.repetitions}")


@dataclass
class CompareConfig:
    """Cross-evaluation of a MinVar planner and a MaxPr planner."""

    budgets: Optional[List[float]] = None
    budget_points: int = 11
    tau: Optional[float] = None
    minvar_algorithm: str = "optimum"
    maxpr_algorithm: str = "greedy-maxpr"
    resample_current: bool = True
    repetitions: int = 100
    seed: int = 0
    epsilon: float = 0.1
    cost_scale: Optional[float] = None
    enumeration_cap: int = DEFAULT_ENUMERATION_CAP
    dataset_path: Optional[str] = None
    claims_path: Optional[str] = None
    measure: MeasureKind = MeasureKind.BIAS

    def __post_init__(self) -> None:
        for algorithm in (self.minvar_algorithm, self.maxpr_algorithm):
            if algorithm not in ALGORITHMS:
                raise ValidationError(f"unknown algorithm '{algorithm}'")
        if self.repetitions < 1:
            raise ValidationError(f"repetitions must be >= 1, got {self.repetitions}")

    def sweep(self, objective: Objective, algorithm: str) -> SweepConfig:
        return SweepConfig(
            algorithms=[algorithm],
            objective=objective,
            budgets=self.budgets,
            budget_points=self.budget_points,
            tau=self.tau,
            seed=self.seed,
            epsilon=self.epsilon,
            cost_scale=self.cost_scale,
            random_runs=1,
            workers=1,
            enumeration_cap=self.enumeration_cap,
            mc_fallback=False,
        )


class Planner:
    """Runs any named algorithm on one instance with shared EVar oracles."""

    def __init__(
        self,
        instance: Instance,
        config: SweepConfig,
        metrics: Optional[SolverMetrics] = None,
    ) -> None:
        self.instance = instance
        self.config = config
        self.metrics = metrics or SolverMetrics()
        self.tau = config.tau if config.tau is not None else instance.tau
        dataset = instance.dataset
        self.blind = dataset.without_covariance()
        self.blind_evaluator = self._evaluator(self.blind)
        self.evaluator = (
            self._evaluator(dataset) if dataset.covariance is not None else self.blind_evaluator
        )

    def _evaluator(self, dataset: Dataset) -> EVarEvaluator:
        return EVarEvaluator(
            self.instance.query,
            dataset,
            cap=self.config.enumeration_cap,
            mc_samples=self.config.mc_samples,
            mc_fallback=self.config.mc_fallback,
            seed=self.config.seed,
            metrics=self.metrics,
        )

    def objective_of(self, chosen: Sequence[Union[str, int]], objective: Objective) -> float:
        """Exact objective of cleaning ``chosen`` under the full dataset."""
        return objective_of(
            objective,
            self.instance.query,
            self.instance.dataset,
            chosen,
            self.tau,
            self.evaluator,
            self.config.enumeration_cap,
        )

    def plan(self, algorithm: str, budget: float, run: int = 0) -> CleaningPlan:
        """Plan with ``algorithm``; covariance-blind algorithms never see the covariance."""
        query, dataset, config = self.instance.query, self.instance.dataset, self.config
        objective = config.objective
        blind = self.blind
        cap = config.enumeration_cap

        if algorithm == "random":
            return random_plan(blind.costs, budget, config.seed, blind.ids, run)
        if algorithm in ("naive", "naive-costblind"):
            return greedy_naive(
                query,
                blind,
                budget,
                cost_blind=algorithm == "naive-costblind",
                objective=lambda chosen: self.objective_of(chosen, objective),
            )
        if algorithm == "greedy-minvar":
            return greedy_minvar(query, blind, budget, evaluator=self.blind_evaluator)
        if algorithm == "greedy-maxpr":
            return greedy_maxpr(query, blind, budget, self.tau, cap)
        if algorithm == "optimum":
            return plan_modular_minvar(query, blind, budget, cost_resolution=config.cost_scale)
        if algorithm == "fptas":
            if objective is Objective.MAXPR:
                return plan_modular_maxpr(query, blind, budget, self.tau, epsilon=config.epsilon)
            return plan_modular_minvar(query, blind, budget, epsilon=config.epsilon)
        if algorithm == "optimum-maxpr":
            return plan_modular_maxpr(
                query, blind, budget, self.tau, cost_resolution=config.cost_scale
            )
        if algorithm == "best":
            return submodular_best(query, blind, budget, evaluator=self.blind_evaluator)
        if algorithm == "greedy-dep":
            weights = query.linear_form()
            if weights is None:
                raise NonLinearQueryError("greedy-dep needs a query with a linear form")
            covariance = dataset.covariance
            if covariance is None:
                covariance = np.diag(dataset.variances)
            return greedy_dep(weights, covariance, dataset.costs, budget, dataset.ids)
        if algorithm == "opt":
            return bruteforce_opt(
                lambda chosen: self.objective_of(chosen, objective),
                dataset.costs,
                budget,
                maximize=objective is Objective.MAXPR,
                ids=dataset.ids,
            )
        raise ValidationError(f"unknown algorithm '{algorithm}'")

    def evaluate(self, algorithm: str, budget: float) -> Tuple[float, float]:
        """Recomputed objective and plan size; random plans are averaged over their runs."""
        runs = self.config.random_runs if algorithm == "random" else 1
        values, sizes = [], []
        for run in range(runs):
            plan = self.plan(algorithm, budget, run)
            values.append(self.objective_of(plan.chosen, self.config.objective))
            sizes.append(plan.size)
        return float(np.mean(values)), float(np.mean(sizes))


def _resolve_instance(
    config: Union[SweepConfig, CompareConfig], instance: Optional[Instance]
) -> Instance:
    if instance is not None:
        return instance
    if not config.dataset_path or not config.claims_path:
        raise ValidationError("an instance or both dataset and claims paths are required")
    return ingest(
        config.dataset_path,
        config.claims_path,
        config.measure,
        getattr(config, "covariance_path", None),
    )


def run_sweep(
    config: SweepConfig,
    instance: Optional[Instance] = None,
    metrics: Optional[SolverMetrics] = None,
) -> pd.DataFrame:
    """Objective achieved by every algorithm at every budget.

    Cells run on a thread pool; a failing cell is logged and recorded as NaN.

    Returns:
        Frame with columns algorithm, budget, budget_fraction, objective_value, plan_size,
        seconds, ordered by algorithm as configured and then by budget
    """
    instance = _resolve_instance(config, instance)
    planner = Planner(instance, config, metrics)
    total = instance.dataset.total_cost
    budgets = config.budget_grid(total)

    def cell(algorithm: str, budget: float) -> Dict[str, float]:
        start = time.perf_counter()
        try:
            with planner.metrics.time_solver(algorithm):
                value, size = planner.evaluate(algorithm, budget)
            planner.metrics.record_plan(algorithm, value)
        except PlannerError as e:
            log.warning(f"{algorithm} at budget {budget:.6g} failed: {e}")
            value, size = math.nan, math.nan
        return {
            "algorithm": algorithm,
            "budget": budget,
            "budget_fraction": budget / total if total > 0 else 0.0,
            "objective_value": value,
            "plan_size": size,
            "seconds": time.perf_counter() - start,
        }

    cells = [(a, b) for a in config.algorithms for b in budgets]
    log.info(
        f"Sweeping {len(config.algorithms)} algorithms over {len(budgets)} budgets "
        f"({config.objective.value}, {config.workers} workers)"
    )
    with ThreadPoolExecutor(max_workers=max(1, config.workers)) as pool:
        rows = list(pool.map(lambda args: cell(*args), cells))

    order = {a: k for k, a in enumerate(config.algorithms)}
    rows.sort(key=lambda row: (order[row["algorithm"]], row["budget"]))
    return pd.DataFrame(rows, columns=SWEEP_COLUMNS)


def draw_truths(
    dataset: Dataset, truth_seed: int, pinned: Optional[Dict[str, float]] = None
) -> np.ndarray:
    """True values: pinned where given, otherwise one draw per object from its own stream."""
    pinned = pinned or {}
    unknown = sorted(set(pinned) - set(dataset.ids))
    if unknown:
        raise ValidationError(f"truths given for unknown objects: {', '.join(unknown)}")
    normals = all(isinstance(obj.dist, NormalSpec) for obj in dataset.objects)
    if dataset.covariance is not None and normals:
        means = np.array([obj.dist.mean for obj in dataset.objects])
        truths = philox(truth_seed, _TRUTH_STREAM).multivariate_normal(means, dataset.covariance)
    else:
        truths = np.array(
            [
                draw(obj.dist, philox(truth_seed, _TRUTH_STREAM, i), 1)[0]
                for i, obj in enumerate(dataset.objects)
            ]
        )
    for obj_id, value in pinned.items():
        truths[dataset.index_of(obj_id)] = float(value)
    return truths


def simulate(
    config: SimulationConfig,
    instance: Optional[Instance] = None,
    metrics: Optional[SolverMetrics] = None,
) -> pd.DataFrame:
    """Clean each plan against hidden truths and report the posterior of the query.

    ``counter_found`` marks plans whose revealed values, with everything else left at its
    current value, push the query more than tau below its current value.
    """
    instance = _resolve_instance(config, instance)
    planner = Planner(instance, config, metrics)
    dataset, query = instance.dataset, instance.query
    truths = draw_truths(dataset, config.truth_seed, config.truths)
    total = dataset.total_cost
    current = dataset.current_values
    threshold = query.evaluate(current) - planner.tau
    threshold -= TIE_TOLERANCE * max(1.0, abs(threshold))

    rows = []
    for algorithm in config.algorithms:
        for budget in config.budget_grid(total):
            try:
                plan = planner.plan(algorithm, budget)
            except PlannerError as e:
                log.warning(f"{algorithm} at budget {budget:.6g} failed: {e}")
                continue
            cleaned = dataset.resolve(plan.chosen)
            posterior = condition(dataset, {i: float(truths[i]) for i in cleaned})
            mean, var = moments(query, posterior, config.enumeration_cap)
            revealed = current.copy()
            revealed[list(cleaned)] = truths[list(cleaned)]
            rows.append(
                {
                    "algorithm": algorithm,
                    "budget": budget,
                    "budget_fraction": budget / total if total > 0 else 0.0,
                    "posterior_mean": mean,
                    "posterior_std": math.sqrt(max(var, 0.0)),
                    "counter_found": bool(query.evaluate(revealed) < threshold),
                }
            )
    return pd.DataFrame(rows, columns=SIMULATION_COLUMNS)


def first_counter_fraction(trace: pd.DataFrame, algorithm: str) -> Optional[float]:
    """Smallest budget fraction at which ``algorithm`` reveals a counter, if any."""
    hits = trace[(trace["algorithm"] == algorithm) & trace["counter_found"]]
    if hits.empty:
        return None
    return float(hits["budget_fraction"].min())


def resample_current(dataset: Dataset, seed: int, repetition: int) -> Dataset:
    """Dataset whose current values are fresh draws from the objects' distributions."""
    objects = []
    for i, obj in enumerate(dataset.objects):
        rng = philox(seed, _RESAMPLE_STREAM, repetition, i)
        value = float(draw(obj.dist, rng, 1)[0])
        objects.append(UncertainObject(obj.id, value, obj.cost, obj.dist))
    return Dataset(tuple(objects), dataset.covariance)


def compare_objectives(
    config: CompareConfig,
    instance: Optional[Instance] = None,
    metrics: Optional[SolverMetrics] = None,
) -> pd.DataFrame:
    """Residual variance and deviation probability of a MinVar plan and a MaxPr plan.

    With ``resample_current`` the current values are redrawn for every repetition and the
    metrics are averaged; otherwise the instance is evaluated once as given.
    """
    instance = _resolve_instance(config, instance)
    repetitions = config.repetitions if config.resample_current else 1
    budgets = config.sweep(Objective.MINVAR, config.minvar_algorithm).budget_grid(
        instance.dataset.total_cost
    )
    contenders: List[Tuple[str, Objective]] = [
        (config.minvar_algorithm, Objective.MINVAR),
        (config.maxpr_algorithm, Objective.MAXPR),
    ]

    sums: Dict[Tuple[float, int], np.ndarray] = {}
    for repetition in range(repetitions):
        current = instance
        if config.resample_current:
            current = instance.rebased(
                resample_current(instance.dataset, config.seed, repetition)
            )
        for slot, (algorithm, objective) in enumerate(contenders):
            planner = Planner(current, config.sweep(objective, algorithm), metrics)
            for budget in budgets:
                plan = planner.plan(algorithm, budget)
                pair = np.array(
                    [
                        planner.objective_of(plan.chosen, Objective.MINVAR),
                        planner.objective_of(plan.chosen, Objective.MAXPR),
                    ]
                )
                key = (budget, slot)
                sums[key] = sums.get(key, np.zeros(2)) + pair

    rows = [
        {
            "budget": budget,
            "plan": algorithm,
            "residual_variance": sums[(budget, slot)][0] / repetitions,
            "deviation_probability": sums[(budget, slot)][1] / repetitions,
        }
        for budget in budgets
        for slot, (algorithm, _) in enumerate(contenders)
    ]
    log.info(f"Compared {len(contenders)} planners over {len(budgets)} budgets")
    return pd.DataFrame(rows, columns=COMPARE_COLUMNS)

