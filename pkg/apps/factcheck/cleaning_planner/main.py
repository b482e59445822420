#!/usr/bin/env python3
"""Cleaning Planner main module.

This module serves as the entry point for the Cleaning Planner application.
"""

import logging
import sys
from contextlib import contextmanager
from typing import Any, Dict, Iterator, List, Optional

import typer
from rich.console import Console
from rich.logging import RichHandler
from rich.table import Table

from .models.plan import CleaningPlan
from .services.datagen import (
    CostModel,
    Family,
    GenSpec,
    adoptions_like,
    generate,
    is_rank_deficient,
    with_dependency,
)
from .services.evar import EVarEvaluator
from .services.experiments import (
    CompareConfig,
    Instance,
    Objective,
    Planner,
    SimulationConfig,
    SweepConfig,
    compare_objectives,
    ingest,
    run_sweep,
    simulate,
)
from .services.instrumentation import SolverMetrics
from .services.maxpr import maxpr_value
from .services.quality import MeasureKind
from .utils.config import PlannerConfig, load_config
from .utils.errors import SolverError, ValidationError
from .utils.io import write_dataset, write_plan, write_table

# Initialize app
app = typer.Typer(help="Budgeted data-cleaning planner for claim checking")
console = Console()

# Shared state set up by the callback
state: Dict[str, Any] = {"config": PlannerConfig(), "metrics": SolverMetrics()}


def setup_logging(log_level: str = "INFO") -> None:
    """Set up logging configuration.

    Args:
        log_level: Logging level
    """
    logging.basicConfig(
        level=getattr(logging, log_level.upper()),
        format="%(message)s",
        datefmt="[%X]",
        handlers=[RichHandler(rich_tracebacks=True)],
    )


@contextmanager
def exit_codes() -> Iterator[None]:
    """Map failures onto exit codes: 2 invalid input, 3 solver failure, 1 anything else."""
    log = logging.getLogger(__name__)
    try:
        yield
    except ValidationError as e:
        log.error(f"Invalid input: {e}", exc_info=True)
        sys.exit(2)
    except SolverError as e:
        log.error(f"Solver failed: {e}", exc_info=True)
        sys.exit(3)
    except Exception as e:
        log.error(f"Error: {e}", exc_info=True)
        sys.exit(1)


def _write_metrics() -> None:
    path = state["config"].metrics_path
    if path:
        state["metrics"].write_textfile(path)


def _instance(
    dataset: str, claims: str, measure: MeasureKind, covariance: Optional[str]
) -> Instance:
    return ingest(dataset, claims, measure, covariance)


def _print_plan(plan: CleaningPlan) -> None:
    table = Table(title=f"{plan.algorithm} plan")
    for column in ["rank", "id", "cost", "benefit", "cumulative_cost"]:
        table.add_column(column)
    for row in plan.to_frame().itertuples(index=False):
        table.add_row(*(f"{v:.6g}" if isinstance(v, float) else str(v) for v in row))
    console.print(table)
    console.print(
        f"objective {plan.objective_value:.6g}, cost {plan.total_cost:.6g}"
        + (f", flags {', '.join(f.value for f in plan.flags)}" if plan.flags else "")
        + (f", {plan.guarantee}" if plan.guarantee else "")
    )


@app.callback()
def main(
    config_path: Optional[str] = typer.Option(
        None, "--config", "-c", help="Path to configuration file"
    ),
    log_level: Optional[str] = typer.Option(None, "--log-level", "-l", help="Logging level"),
    metrics_out: Optional[str] = typer.Option(
        None, "--metrics-out", help="Write solver metrics in Prometheus text format"
    ),
) -> None:
    """Plan which uncertain values to clean before checking a claim."""
    with exit_codes():
        config = load_config(config_path).merged(log_level=log_level, metrics_path=metrics_out)
        setup_logging(config.log_level)
        state["config"] = config
        state["metrics"] = SolverMetrics()


@app.command()
def plan(
    dataset: str = typer.Option(..., "--dataset", "-d", help="Dataset CSV"),
    claims: str = typer.Option(..., "--claims", help="Claims JSON"),
    budget: float = typer.Option(..., "--budget", "-b", help="Cleaning budget"),
    algorithm: str = typer.Option("greedy-minvar", "--algorithm", "-a", help="Algorithm"),
    measure: MeasureKind = typer.Option(MeasureKind.BIAS, "--measure", "-m"),
    objective: Objective = typer.Option(Objective.MINVAR, "--objective"),
    tau: Optional[float] = typer.Option(None, "--tau", help="Deviation margin (overrides claims)"),
    epsilon: Optional[float] = typer.Option(None, "--epsilon", help="FPTAS accuracy"),
    seed: Optional[int] = typer.Option(None, "--seed", min=0, help="Random seed"),
    cost_scale: Optional[float] = typer.Option(
        None, "--cost-scale", help="Round costs to this resolution before a DP"
    ),
    mc_samples: Optional[int] = typer.Option(None, "--mc-samples", help="Monte Carlo samples"),
    covariance: Optional[str] = typer.Option(None, "--covariance", help="Covariance CSV"),
    out: Optional[str] = typer.Option(None, "--out", "-o", help="Plan CSV path"),
) -> None:
    """Compute a cleaning plan within a budget."""
    log = logging.getLogger(__name__)
    with exit_codes():
        instance = _instance(dataset, claims, measure, covariance)
        config = SweepConfig.from_planner_config(
            state["config"],
            algorithms=[algorithm],
            objective=objective,
            tau=tau,
            epsilon=epsilon,
            seed=seed,
            cost_scale=cost_scale,
            mc_samples=mc_samples,
        )
        planner = Planner(instance, config, state["metrics"])
        with state["metrics"].time_solver(algorithm):
            result = planner.plan(algorithm, budget)
        result = result.with_objective(planner.objective_of(result.chosen, objective))
        state["metrics"].record_plan(algorithm, result.objective_value)
        log.info(f"{algorithm}: {result.size} objects, objective {result.objective_value:.6g}")

        if out:
            write_plan(result, out)
            log.info(f"Wrote plan to {out}")
        else:
            _print_plan(result)
        _write_metrics()


def _clean_list(clean: Optional[str]) -> List[str]:
    return [token.strip() for token in clean.split(",") if token.strip()] if clean else []


@app.command()
def evar(
    dataset: str = typer.Option(..., "--dataset", "-d", help="Dataset CSV"),
    claims: str = typer.Option(..., "--claims", help="Claims JSON"),
    measure: MeasureKind = typer.Option(MeasureKind.BIAS, "--measure", "-m"),
    clean: Optional[str] = typer.Option(None, "--clean", help="Comma-separated ids to clean"),
    covariance: Optional[str] = typer.Option(None, "--covariance", help="Covariance CSV"),
) -> None:
    """Expected residual variance of the quality measure after cleaning."""
    with exit_codes():
        instance = _instance(dataset, claims, measure, covariance)
        config = state["config"]
        evaluator = EVarEvaluator(
            instance.query,
            instance.dataset,
            cap=config.enumeration_cap,
            mc_samples=config.mc_samples,
            mc_fallback=config.mc_fallback,
            seed=config.seed,
            metrics=state["metrics"],
        )
        value, estimated = evaluator.evaluate_flagged(_clean_list(clean))
        suffix = " (Monte Carlo estimate)" if estimated else ""
        console.print(f"EVar = {value!r}{suffix}")
        _write_metrics()


@app.command()
def maxpr(
    dataset: str = typer.Option(..., "--dataset", "-d", help="Dataset CSV"),
    claims: str = typer.Option(..., "--claims", help="Claims JSON"),
    measure: MeasureKind = typer.Option(MeasureKind.BIAS, "--measure", "-m"),
    clean: Optional[str] = typer.Option(None, "--clean", help="Comma-separated ids to clean"),
    tau: Optional[float] = typer.Option(None, "--tau", help="Deviation margin (overrides claims)"),
    covariance: Optional[str] = typer.Option(None, "--covariance", help="Covariance CSV"),
) -> None:
    """Probability that cleaning pushes the measure more than tau below its current value."""
    with exit_codes():
        instance = _instance(dataset, claims, measure, covariance)
        margin = tau if tau is not None else instance.tau
        value = maxpr_value(
            instance.query,
            instance.dataset,
            _clean_list(clean),
            margin,
            state["config"].enumeration_cap,
        )
        console.print(f"MaxPr = {value!r}")


def _sweep_fields(
    dataset: str,
    claims: str,
    measure: MeasureKind,
    objective: Objective,
    algorithms: List[str],
    covariance: Optional[str],
) -> Dict[str, Any]:
    return dict(
        algorithms=list(algorithms),
        objective=objective,
        dataset_path=dataset,
        claims_path=claims,
        covariance_path=covariance,
        measure=measure,
    )


@app.command()
def sweep(
    dataset: str = typer.Option(..., "--dataset", "-d", help="Dataset CSV"),
    claims: str = typer.Option(..., "--claims", help="Claims JSON"),
    algorithm: List[str] = typer.Option(
        ["naive", "greedy-minvar"], "--algorithm", "-a", help="Algorithms to compare"
    ),
    measure: MeasureKind = typer.Option(MeasureKind.BIAS, "--measure", "-m"),
    objective: Objective = typer.Option(Objective.MINVAR, "--objective"),
    budget: Optional[List[float]] = typer.Option(None, "--budget", "-b", help="Explicit budgets"),
    budget_grid: Optional[int] = typer.Option(
        None, "--budget-grid", help="Number of evenly spaced budgets"
    ),
    tau: Optional[float] = typer.Option(None, "--tau"),
    epsilon: Optional[float] = typer.Option(None, "--epsilon"),
    seed: Optional[int] = typer.Option(None, "--seed", min=0),
    cost_scale: Optional[float] = typer.Option(None, "--cost-scale"),
    covariance: Optional[str] = typer.Option(None, "--covariance", help="Covariance CSV"),
    out: str = typer.Option("sweep.csv", "--out", "-o", help="Result CSV path"),
) -> None:
    """Objective of each algorithm over a budget grid."""
    with exit_codes():
        config = SweepConfig.from_planner_config(
            state["config"],
            **_sweep_fields(dataset, claims, measure, objective, algorithm, covariance),
            budgets=list(budget) if budget else None,
            budget_points=budget_grid,
            tau=tau,
            epsilon=epsilon,
            seed=seed,
            cost_scale=cost_scale,
        )
        write_table(run_sweep(config, metrics=state["metrics"]), out)
        _write_metrics()


@app.command("simulate")
def simulate_command(
    dataset: str = typer.Option(..., "--dataset", "-d", help="Dataset CSV"),
    claims: str = typer.Option(..., "--claims", help="Claims JSON"),
    algorithm: List[str] = typer.Option(
        ["naive", "greedy-maxpr"], "--algorithm", "-a", help="Algorithms to compare"
    ),
    measure: MeasureKind = typer.Option(MeasureKind.BIAS, "--measure", "-m"),
    objective: Objective = typer.Option(Objective.MAXPR, "--objective"),
    budget: Optional[List[float]] = typer.Option(None, "--budget", "-b"),
    budget_grid: Optional[int] = typer.Option(None, "--budget-grid"),
    tau: Optional[float] = typer.Option(None, "--tau"),
    seed: Optional[int] = typer.Option(None, "--seed", min=0),
    truth_seed: int = typer.Option(
        0, "--truth-seed", min=0, help="Seed of the hidden true values"
    ),
    covariance: Optional[str] = typer.Option(None, "--covariance", help="Covariance CSV"),
    out: str = typer.Option("simulation.csv", "--out", "-o"),
) -> None:
    """Reveal true values for each plan and report the posterior of the measure."""
    with exit_codes():
        config = SimulationConfig.from_planner_config(
            state["config"],
            **_sweep_fields(dataset, claims, measure, objective, algorithm, covariance),
            budgets=list(budget) if budget else None,
            budget_points=budget_grid,
            tau=tau,
            seed=seed,
            truth_seed=truth_seed,
            repetitions=state["config"].repetitions,
        )
        write_table(simulate(config, metrics=state["metrics"]), out)
        _write_metrics()


@app.command()
def compare(
    dataset: str = typer.Option(..., "--dataset", "-d", help="Dataset CSV"),
    claims: str = typer.Option(..., "--claims", help="Claims JSON"),
    measure: MeasureKind = typer.Option(MeasureKind.BIAS, "--measure", "-m"),
    budget: Optional[List[float]] = typer.Option(None, "--budget", "-b"),
    budget_grid: int = typer.Option(11, "--budget-grid"),
    tau: Optional[float] = typer.Option(None, "--tau"),
    minvar_algorithm: str = typer.Option("optimum", "--minvar-algorithm"),
    maxpr_algorithm: str = typer.Option("greedy-maxpr", "--maxpr-algorithm"),
    keep_current: bool = typer.Option(
        False, "--keep-current", help="Do not resample current values"
    ),
    seed: Optional[int] = typer.Option(None, "--seed", min=0),
    out: str = typer.Option("compare.csv", "--out", "-o"),
) -> None:
    """Cross-evaluate a MinVar plan and a MaxPr plan under both objectives."""
    with exit_codes():
        config = state["config"]
        compare_config = CompareConfig(
            budgets=list(budget) if budget else None,
            budget_points=budget_grid,
            tau=tau,
            minvar_algorithm=minvar_algorithm,
            maxpr_algorithm=maxpr_algorithm,
            resample_current=not keep_current,
            repetitions=config.repetitions,
            seed=seed if seed is not None else config.seed,
            epsilon=config.epsilon,
            cost_scale=config.cost_scale,
            enumeration_cap=config.enumeration_cap,
            dataset_path=dataset,
            claims_path=claims,
            measure=measure,
        )
        write_table(compare_objectives(compare_config, metrics=state["metrics"]), out)
        _write_metrics()


@app.command("gen-data")
def gen_data(
    family: str = typer.Option(
        "UR", "--family", "-f", help="UR, LN, SM, normal-meanfixed or adoptions"
    ),
    n: int = typer.Option(40, "--n", help="Number of objects"),
    seed: Optional[int] = typer.Option(None, "--seed", min=0),
    cost_model: str = typer.Option("uniform", "--cost-model", help="uniform, recency or two-point"),
    gamma: Optional[float] = typer.Option(None, "--gamma", help="Inject gamma^|j-i| dependency"),
    out: str = typer.Option("dataset.csv", "--out", "-o", help="Dataset CSV path"),
    covariance_out: Optional[str] = typer.Option(None, "--covariance-out"),
) -> None:
    """Generate a synthetic dataset."""
    log = logging.getLogger(__name__)
    with exit_codes():
        run_seed = seed if seed is not None else state["config"].seed
        if family == "adoptions":
            dataset = adoptions_like(n, seed=run_seed)
        else:
            try:
                spec_family = Family(family)
                costs = {
                    "uniform": CostModel.uniform,
                    "recency": CostModel.recency,
                    "two-point": CostModel.two_point,
                }[cost_model]()
            except (ValueError, KeyError) as e:
                raise ValidationError(f"unknown family or cost model: {e}") from None
            dataset = generate(GenSpec(spec_family, n, run_seed, costs))
        if gamma is not None:
            dataset = with_dependency(dataset, gamma)
            if is_rank_deficient(dataset.covariance):
                log.warning("Injected covariance is rank deficient")
        write_dataset(dataset, out, covariance_out)
        log.info(f"Wrote {len(dataset)} objects to {out}")


if __name__ == "__main__":
    app()
