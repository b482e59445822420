"""Unit tests for the experiment harness."""

import json
import math

import numpy as np
import pandas as pd
import pytest
from scipy.stats import norm

from apps.factcheck.cleaning_planner.models.claims import disjoint_window_claims
from apps.factcheck.cleaning_planner.models.distributions import DiscreteDist, NormalSpec
from apps.factcheck.cleaning_planner.models.query import LinearQuery
from apps.factcheck.cleaning_planner.services.datagen import inject_dependency
from apps.factcheck.cleaning_planner.services.experiments import (
    COMPARE_COLUMNS,
    SIMULATION_COLUMNS,
    SWEEP_COLUMNS,
    CompareConfig,
    Instance,
    Objective,
    Planner,
    SimulationConfig,
    SweepConfig,
    compare_objectives,
    draw_truths,
    first_counter_fraction,
    ingest,
    resample_current,
    run_sweep,
    simulate,
)
from apps.factcheck.cleaning_planner.services.quality import MeasureKind, QualityMeasure
from apps.factcheck.cleaning_planner.utils.errors import ValidationError
from apps.factcheck.cleaning_planner.utils.io import write_dataset
from tests.unit.conftest import make_dataset


@pytest.fixture
def low_sum_instance(low_sum_query, two_uniform_dataset):
    return Instance(two_uniform_dataset, low_sum_query)


@pytest.fixture
def centered_instance():
    """Three centered normal objects under a plain sum."""
    dataset = make_dataset(
        [NormalSpec(0.0, 2.0), NormalSpec(0.0, 1.0), NormalSpec(0.0, 1.5)],
        current=[0.0, 0.0, 0.0],
    )
    return Instance(dataset, LinearQuery([1.0, 1.0, 1.0]), tau=1.0)


class TestSweepConfig:
    """Tests for the SweepConfig class."""

    def test_default_grid(self):
        """Test evenly spaced budgets."""
        config = SweepConfig(algorithms=["naive"], budget_points=3)
        assert config.budget_grid(2.0) == [0.0, 1.0, 2.0]

    def test_budget_outside_range(self):
        """Test that budgets above the total cost are rejected."""
        config = SweepConfig(algorithms=["naive"], budgets=[1.0, 5.0])
        with pytest.raises(ValidationError):
            config.budget_grid(2.0)

    def test_unknown_algorithm(self):
        """Test that unknown algorithm names are rejected."""
        with pytest.raises(ValidationError):
            SweepConfig(algorithms=["simplex"])


class TestRunSweep:
    """Tests for budget sweeps."""

    def test_budget_ends(self, low_sum_instance, metrics):
        """Test the uncleaned and fully cleaned ends of the sweep."""
        config = SweepConfig(
            algorithms=["naive", "greedy-minvar"], budgets=[0.0, 2.0], workers=2
        )
        frame = run_sweep(config, low_sum_instance, metrics)

        # Verify layout and both ends
        assert list(frame.columns) == SWEEP_COLUMNS
        assert frame["algorithm"].tolist() == ["naive", "naive", "greedy-minvar", "greedy-minvar"]
        assert frame["budget_fraction"].tolist() == [0.0, 1.0, 0.0, 1.0]
        start = frame[frame["budget"] == 0.0]["objective_value"]
        end = frame[frame["budget"] == 2.0]["objective_value"]
        assert start.tolist() == pytest.approx([26 / 225] * 2, abs=1e-12)
        assert end.tolist() == pytest.approx([0.0, 0.0], abs=1e-12)

    def test_failing_cell(self, low_sum_instance):
        """Test that an unsupported algorithm leaves NaN instead of aborting."""
        config = SweepConfig(algorithms=["optimum", "naive"], budgets=[1.0], workers=1)
        frame = run_sweep(config, low_sum_instance)
        assert math.isnan(frame["objective_value"].iloc[0])
        assert frame["objective_value"].iloc[1] == pytest.approx(4 / 45, abs=1e-12)

    def test_random_average(self, low_sum_instance):
        """Test that random plans over the full budget clean everything."""
        config = SweepConfig(algorithms=["random"], budgets=[2.0], random_runs=5, workers=1)
        frame = run_sweep(config, low_sum_instance)
        assert frame["objective_value"].iloc[0] == pytest.approx(0.0, abs=1e-12)
        assert frame["plan_size"].iloc[0] == 2.0

    def test_needs_instance(self):
        """Test that a sweep needs an instance or input paths."""
        with pytest.raises(ValidationError):
            run_sweep(SweepConfig(algorithms=["naive"]))


class TestPlanner:
    """Tests for the Planner class."""

    @pytest.mark.parametrize("budget", [1.0, 2.0])
    def test_minvar_matches_maxpr_on_centered_normals(self, centered_instance, budget):
        """Test that both objectives pick the same plan for centered normals."""
        planner = Planner(centered_instance, SweepConfig(algorithms=["optimum"]))
        minvar = planner.plan("optimum", budget)
        maxpr = planner.plan("optimum-maxpr", budget)
        assert sorted(minvar.chosen) == sorted(maxpr.chosen)

    def test_exact_objectives(self, centered_instance):
        """Test the recomputed objectives of one plan."""
        planner = Planner(centered_instance, SweepConfig(algorithms=["optimum"]))

        # Verify residual variance and deviation probability
        assert planner.objective_of(["x1"], Objective.MINVAR) == pytest.approx(1.0 + 2.25)
        assert planner.objective_of(["x1"], Objective.MAXPR) == pytest.approx(norm.cdf(-0.5))

    def test_greedy_dep_without_covariance(self, centered_instance):
        """Test that greedy-dep falls back to the variances."""
        planner = Planner(centered_instance, SweepConfig(algorithms=["greedy-dep"]))
        plan = planner.plan("greedy-dep", 1.0)
        assert plan.chosen == ["x1"]
        assert plan.objective_value == pytest.approx(3.25)


class TestSimulate:
    """Tests for the reveal-the-truth simulation."""

    def test_full_budget_removes_uncertainty(self, low_sum_instance):
        """Test that cleaning everything leaves no posterior spread."""
        config = SimulationConfig(
            algorithms=["greedy-minvar"],
            budgets=[0.0, 2.0],
            truths={"x1": 0.0, "x2": 1 / 3},
        )
        frame = simulate(config, low_sum_instance)

        # Verify prior and posterior rows
        assert list(frame.columns) == SIMULATION_COLUMNS
        assert frame["posterior_std"].tolist() == pytest.approx([math.sqrt(26 / 225), 0.0])
        assert frame["posterior_mean"].tolist() == pytest.approx([2 / 15, 1.0])
        assert not frame["counter_found"].any()

    def test_counter_found(self, sum_bias, two_uniform_dataset):
        """Test that revealing a low value finds a counter."""
        instance = Instance(two_uniform_dataset, sum_bias, tau=7 / 12)
        config = SimulationConfig(
            algorithms=["greedy-maxpr"], budgets=[1.0], truths={"x1": 0.0, "x2": 1 / 3}
        )
        frame = simulate(config, instance)
        assert frame["counter_found"].tolist() == [True]
        assert first_counter_fraction(frame, "greedy-maxpr") == 0.5

    def test_pinned_unknown_object(self, two_uniform_dataset):
        """Test that pinned truths must name known objects."""
        with pytest.raises(ValidationError):
            draw_truths(two_uniform_dataset, 0, {"x9": 1.0})

    def test_truths_deterministic(self, two_uniform_dataset):
        """Test that the truth seed fixes the truths."""
        first = draw_truths(two_uniform_dataset, 4)
        assert np.array_equal(first, draw_truths(two_uniform_dataset, 4))


class TestExperimentShapes:
    """Sweeps and simulations on instances whose outcome is known in closed form."""

    def test_uniqueness_sweep_dominance(self):
        """Test GreedyMinVar against GreedyNaive on a 40-object uniqueness sweep.

        Ten disjoint windows of four objects are claimed to sum to at most 100. Nine windows
        hold objects on {30, 100}, so their claims always fail and cleaning them is useless
        despite the large variance; the first window holds objects on {20, 30}.
        """
        live = [DiscreteDist.uniform([20.0, 30.0])] * 4
        decided = [DiscreteDist.uniform([30.0, 100.0])] * 36
        dataset = make_dataset(live + decided)
        system = disjoint_window_claims(40, 4, 100.0)
        instance = Instance(dataset, QualityMeasure.build(MeasureKind.DUPLICITY, system, dataset))
        budgets = [0.0, 1.0, 2.0, 3.0, 4.0, 20.0, 36.0, 38.0, 40.0]
        config = SweepConfig(algorithms=["naive", "greedy-minvar"], budgets=budgets, workers=1)
        frame = run_sweep(config, instance)

        naive = frame[frame["algorithm"] == "naive"]["objective_value"].to_numpy()
        minvar = frame[frame["algorithm"] == "greedy-minvar"]["objective_value"].to_numpy()

        # Verify the exact rows of both planners
        expected_naive = [55 / 256] * 7 + [9 / 64, 0.0]
        expected_minvar = [55 / 256, 23 / 128, 9 / 64, 3 / 32] + [0.0] * 5
        assert naive.tolist() == pytest.approx(expected_naive, abs=1e-12)
        assert minvar.tolist() == pytest.approx(expected_minvar, abs=1e-12)

        # Verify pointwise and total dominance
        assert np.all(minvar <= naive + 1e-12)
        assert minvar.sum() < naive.sum()

    @pytest.mark.parametrize("gamma", [0.3, 0.6])
    def test_weak_dependency_matches_optimum(self, gamma):
        """Test that covariance-blind GreedyMinVar is optimal under weak dependency.

        Seventeen objects on a chain carry three dominant objects eight positions apart.
        """
        sigmas = [10.0 if i in (0, 8, 16) else 1.0 for i in range(17)]
        dataset = make_dataset([NormalSpec(0.0, s) for s in sigmas], current=[0.0] * 17)
        dataset = dataset.with_covariance(inject_dependency(sigmas, gamma))
        instance = Instance(dataset, LinearQuery([1.0] * 17))
        config = SweepConfig(algorithms=["greedy-minvar", "opt"], budgets=[0.0, 3.0], workers=1)
        frame = run_sweep(config, instance)

        minvar = frame[frame["algorithm"] == "greedy-minvar"]["objective_value"].tolist()
        optimum = frame[frame["algorithm"] == "opt"]["objective_value"].tolist()

        # Verify equal objectives and the dominant plan
        assert minvar == pytest.approx(optimum, abs=1e-9)
        planner = Planner(instance, config)
        assert sorted(planner.plan("greedy-minvar", 3.0).chosen) == ["x1", "x17", "x9"]
        assert sorted(planner.plan("opt", 3.0).chosen) == ["x1", "x17", "x9"]

    def test_maxpr_finds_counter_first(self):
        """Test that GreedyMaxPr reveals a counter at a smaller budget than GreedyNaive.

        The low-variance first object is the only one that can pull the sum down; naive
        cleaning prefers the two high-variance objects that can only raise it.
        """
        dataset = make_dataset(
            [
                DiscreteDist.uniform([0.0, 10.0]),
                DiscreteDist.uniform([10.0, 110.0]),
                DiscreteDist.uniform([10.0, 110.0]),
            ],
            current=[10.0, 10.0, 10.0],
        )
        instance = Instance(dataset, LinearQuery([1.0, 1.0, 1.0]), tau=5.0)
        config = SimulationConfig(
            algorithms=["naive", "greedy-maxpr"],
            objective=Objective.MAXPR,
            budgets=[0.0, 1.0, 2.0, 3.0],
            truths={"x1": 0.0, "x2": 10.0, "x3": 10.0},
        )
        trace = simulate(config, instance)

        naive = first_counter_fraction(trace, "naive")
        maxpr = first_counter_fraction(trace, "greedy-maxpr")

        # Verify the counter-finding order
        assert maxpr == pytest.approx(1 / 3)
        assert naive == pytest.approx(1.0)
        assert maxpr <= naive


def test_first_counter_fraction_none():
    """Test an algorithm that never finds a counter."""
    trace = pd.DataFrame(
        {"algorithm": ["naive"], "budget_fraction": [0.5], "counter_found": [False]}
    )
    assert first_counter_fraction(trace, "naive") is None


class TestCompareObjectives:
    """Tests for the MinVar versus MaxPr comparison."""

    def test_objectives_disagree(self):
        """Test a shifted object that only the MaxPr planner cleans."""
        dataset = make_dataset(
            [NormalSpec(0.0, 2.0), NormalSpec(0.0, 1.0)], current=[0.0, 3.0]
        )
        instance = Instance(dataset, LinearQuery([1.0, 1.0]), tau=1.0)
        config = CompareConfig(budgets=[1.0], resample_current=False)
        frame = compare_objectives(config, instance)

        # Verify each planner wins on its own objective
        assert list(frame.columns) == COMPARE_COLUMNS
        minvar, maxpr = frame.iloc[0], frame.iloc[1]
        assert (minvar["plan"], maxpr["plan"]) == ("optimum", "greedy-maxpr")
        assert minvar["residual_variance"] == pytest.approx(1.0)
        assert maxpr["residual_variance"] == pytest.approx(4.0)
        assert minvar["deviation_probability"] == pytest.approx(norm.cdf(-0.5))
        assert maxpr["deviation_probability"] == pytest.approx(norm.cdf(2.0))

    def test_resampled_current_values(self, two_uniform_dataset):
        """Test that resampled current values come from each support."""
        resampled = resample_current(two_uniform_dataset, seed=1, repetition=3)
        for obj in resampled.objects:
            assert obj.current_value in obj.dist.values
        assert resampled.ids == two_uniform_dataset.ids


def test_ingest(tmp_path, crime_dataset):
    """Test reading a dataset and a window claims file into an instance."""
    dataset_path = tmp_path / "crime.csv"
    claims_path = tmp_path / "claims.json"
    write_dataset(crime_dataset, dataset_path)
    claims_path.write_text(
        json.dumps(
            {
                "original": {"type": "window", "left": 3, "right": 4, "w": 1},
                "perturbations": {"mode": "window"},
                "tau": 50,
            }
        )
    )

    instance = ingest(dataset_path, claims_path, MeasureKind.FRAGILITY)

    # Verify the claim system and measure
    assert instance.system.m == 3
    assert instance.tau == 50.0
    assert instance.query.kind is MeasureKind.FRAGILITY
    assert instance.dataset == crime_dataset
