"""Solver instrumentation.

This module exposes planner counters and timings through a prometheus-client registry.
"""

import logging
import time
from contextlib import contextmanager
from pathlib import Path
from typing import Iterator, Optional, Union

from prometheus_client import CollectorRegistry, Counter, Gauge, Histogram, write_to_textfile

log = logging.getLogger(__name__)


class SolverMetrics:
    """Counters and timings for EVar evaluation and solver runs."""

    def __init__(self, registry: Optional[CollectorRegistry] = None) -> None:
        """Initialize the metrics.

        Args:
            registry: Optional registry to use. A private registry is created otherwise,
                     which keeps repeated instantiation in tests free of duplicate
                     registration errors.
        """
        self.registry = registry or CollectorRegistry()

        self.evar_evaluations = Counter(
            "cleaning_planner_evar_evaluations_total",
            "Number of EVar evaluations by evaluation mode",
            ["mode"],
            registry=self.registry,
        )

        self.evar_cache_hits = Counter(
            "cleaning_planner_evar_cache_hits_total",
            "Number of EVar lookups answered from the cache",
            registry=self.registry,
        )

        self.solver_runs = Counter(
            "cleaning_planner_solver_runs_total",
            "Number of completed solver runs",
            ["algorithm"],
            registry=self.registry,
        )

        self.solver_seconds = Histogram(
            "cleaning_planner_solver_seconds",
            "Wall-clock time of solver runs in seconds",
            ["algorithm"],
            registry=self.registry,
        )

        self.plan_objective = Gauge(
            "cleaning_planner_plan_objective",
            "Objective value of the most recent plan per algorithm",
            ["algorithm"],
            registry=self.registry,
        )

    def record_evaluation(self, mode: str) -> None:
        self.evar_evaluations.labels(mode=mode).inc()

    def record_cache_hit(self) -> None:
        self.evar_cache_hits.inc()

    @contextmanager
    def time_solver(self, algorithm: str) -> Iterator[None]:
        """Time a solver run and count it on success."""
        start = time.perf_counter()
        yield
        self.solver_seconds.labels(algorithm=algorithm).observe(time.perf_counter() - start)
        self.solver_runs.labels(algorithm=algorithm).inc()

    def record_plan(self, algorithm: str, objective_value: float) -> None:
        self.plan_objective.labels(algorithm=algorithm).set(objective_value)

    def write_textfile(self, path: Union[str, Path]) -> None:
        """Write the registry in text exposition format."""
        write_to_textfile(str(path), self.registry)
        log.info(f"Wrote solver metrics to {path}")
