"""Unit tests for solver instrumentation."""

import pytest

from apps.factcheck.cleaning_planner.services.instrumentation import SolverMetrics


class TestSolverMetrics:
    """Tests for the SolverMetrics class."""

    def test_init(self, metrics):
        """Test that every metric is registered on a private registry."""
        names = {metric.name for metric in metrics.registry.collect()}
        assert {
            "cleaning_planner_evar_evaluations",
            "cleaning_planner_evar_cache_hits",
            "cleaning_planner_solver_runs",
            "cleaning_planner_solver_seconds",
            "cleaning_planner_plan_objective",
        } <= names

    def test_independent_registries(self):
        """Test that two instances do not share counts."""
        first, second = SolverMetrics(), SolverMetrics()
        first.record_cache_hit()
        assert first.registry.get_sample_value("cleaning_planner_evar_cache_hits_total") == 1.0
        assert second.registry.get_sample_value("cleaning_planner_evar_cache_hits_total") == 0.0

    def test_time_solver(self, metrics):
        """Test that a timed run is counted and observed."""
        with metrics.time_solver("naive"):
            pass

        # Verify count and histogram
        registry = metrics.registry
        labels = {"algorithm": "naive"}
        assert registry.get_sample_value("cleaning_planner_solver_runs_total", labels) == 1.0
        assert registry.get_sample_value("cleaning_planner_solver_seconds_count", labels) == 1.0

    def test_failed_run_not_counted(self, metrics):
        """Test that a run raising an error is not counted."""
        with pytest.raises(RuntimeError):
            with metrics.time_solver("opt"):
                raise RuntimeError("boom")
        value = metrics.registry.get_sample_value(
            "cleaning_planner_solver_runs_total", {"algorithm": "opt"}
        )
        assert value is None

    def test_record_plan(self, metrics):
        """Test the objective gauge."""
        metrics.record_plan("best", 0.5)
        metrics.record_plan("best", 0.25)
        value = metrics.registry.get_sample_value(
            "cleaning_planner_plan_objective", {"algorithm": "best"}
        )
        assert value == 0.25

    def test_write_textfile(self, metrics, tmp_path):
        """Test writing the registry to a file."""
        metrics.record_evaluation("linear")
        path = tmp_path / "metrics.prom"
        metrics.write_textfile(path)
        text = path.read_text()
        assert 'cleaning_planner_evar_evaluations_total{mode="linear"} 1.0' in text
