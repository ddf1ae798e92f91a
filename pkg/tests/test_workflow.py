import csv

import numpy as np
import pytest

from core.dynamics import Trajectory, endemic_equilibrium
from graph import ScenarioGraph, run_scenario, scenario_variant, sweep
from models.errors import ConfigError
from nodes.evaluation_node import settling_time



@pytest.fixture(scope="module")
def graph():
    return ScenarioGraph()


def test_settling_time():
    times = np.arange(6.0)
    assert settling_time(times, np.array([1.5, 1.2, 0.98, 1.005, 1.0, 1.0])) == 3.0
    assert settling_time(times, np.ones(6)) == 0.0
    assert settling_time(times, np.array([1.0, 1.0, 1.0, 1.0, 1.0, 1.2])) is None


def test_short_run_writes_a_consistent_trajectory(tmp_path, load_scenario):
    report = run_scenario(load_scenario("budget_run.json", horizon=50, output_dir=str(tmp_path)))
    assert report.error is None
    summary = report.summary
    assert summary.design.method == "active_constraint"
    assert [e.kind for e in summary.events] == ["initial"]
    assert summary.events[0].alpha > 0

    traj = Trajectory.read_csv(report.trajectory_path)
    assert traj.times[-1] == pytest.approx(50.0)
    ratio = traj.I / summary.i_star
    assert ratio.max() == pytest.approx(summary.peak_ratio, abs=1e-9)
    assert traj.cost[-1] == pytest.approx(summary.terminal_cost, abs=1e-9)
    assert traj.I[-1] == pytest.approx(summary.terminal["I"], abs=1e-9)


def test_run_keeps_the_trajectory_on_the_state(graph, load_scenario):
    state = graph.run(load_scenario("budget_run.json", horizon=5))
    assert state.trajectory is not None
    assert state.report.trajectory_path is None
    assert state.mechanism.r_bar == pytest.approx(state.design.r_star)


def test_runs_are_deterministic(graph, load_scenario):
    cfg = load_scenario("budget_run.json", horizon=20)
    first = graph.run_scenario(cfg).summary.model_dump()
    second = graph.run_scenario(cfg).summary.model_dump()
    assert first == second


def test_planning_failure_is_reported(graph, load_scenario):
    cfg = load_scenario(
        "budget_run.json", mechanism={"beta_bar": 0.2, "r_bar": [0.3, 0.0], "upsilon": 3.0}, horizon=10
    )
    report = graph.run_scenario(cfg)
    assert report.summary is None
    assert report.error.startswith("Error in planning")
    assert report.error_kind == "numeric"
    assert report.config["name"] == "budget_run"


def test_explicit_redesign_event(graph, load_scenario):
    cfg = load_scenario(
        "budget_run.json",
        mechanism={"beta_bar": 0.17, "r_bar": [0.2, 0.0], "upsilon": 3.0},
        events=[{"t": 10.0, "r_bar": [0.3, 0.0], "upsilon": 2.0}],
        horizon=20,
    )
    summary = graph.run_scenario(cfg).summary
    assert [(e.t, e.kind) for e in summary.events] == [(0.0, "initial"), (10.0, "redesign")]
    assert summary.events[1].r_bar == [0.3, 0.0]
    assert summary.events[1].upsilon == 2.0
    assert summary.events[1].beta_bar == 0.17
    assert [(s.start, s.end) for s in summary.segments] == [(0.0, 10.0), (10.0, 20.0)]
    assert len(summary.bound_checks) == 2


def test_learning_planner_switches_at_t0(graph, load_scenario):
    state = graph.run(load_scenario("learning_switch.json", horizon=300))
    summary = state.report.summary
    assert summary.t0 == pytest.approx(240.0)
    assert len(summary.mu_history) == 8
    assert [e.kind for e in summary.events] == ["initial", "switch"]
    start = summary.events[0]
    assert start.r_bar == pytest.approx([0.2, 0.0])
    assert 0.15 < start.beta_bar < 0.17
    assert summary.events[1].r_bar == pytest.approx(summary.design.r_star)
    assert np.min(state.trajectory.rewards) >= 0


def test_prior_equilibrium_start(graph, load_scenario):
    state = graph.run(load_scenario("redesign_upsilon.json", horizon=5))
    x0 = state.initial.x
    assert x0 == pytest.approx([0.997, 0.003], abs=5e-4)
    i0, _ = endemic_equilibrium(float(np.dot(state.scenario.epidemic.beta_vec, x0)), state.scenario.epidemic)
    assert state.initial.I == pytest.approx(i0)


def test_noise_scenario_cross_checks_monte_carlo(graph, load_scenario):
    cfg = load_scenario(
        "normal_noise.json",
        choice={"kind": "mc", "dist": "normal", "scale": 1.0, "samples": 200000, "seed": 7},
        horizon=10,
    )
    summary = graph.run_scenario(cfg).summary
    assert summary.mc_discrepancy is not None
    assert summary.mc_discrepancy < 0.01
    assert summary.events[0].alpha is None
    assert summary.bound_checks == []


def test_scenario_variant(load_scenario):
    cfg = load_scenario("budget_run.json")
    assert scenario_variant(cfg, "kappa", 2).mechanism.kappa == 2.0
    assert scenario_variant(cfg, "mu", 0.5).choice.mu == 0.5
    noisy = scenario_variant(cfg, "noise_dist", "laplace")
    assert noisy.choice.kind == "noise" and noisy.choice.dist == "laplace" and noisy.choice.scale == 1.0
    assert noisy.name == "budget_run_noise_dist_laplace"
    with pytest.raises(ConfigError):
        scenario_variant(cfg, "gamma", 0.2)
    with pytest.raises(ConfigError):
        scenario_variant(cfg, "upsilon", -1.0)


def test_sweep_writes_a_combined_csv(tmp_path, load_scenario):
    cfg = load_scenario("budget_kappa.json", horizon=10)
    result = sweep(cfg, "kappa", [0.0, 1.0, 5.0], out_dir=str(tmp_path))
    assert [r.error for r in result.reports] == [None, None, None]
    assert [r.name for r in result.reports] == [scenario_variant(cfg, "kappa", v).name for v in (0.0, 1.0, 5.0)]
    with open(result.combined_path) as handle:
        rows = list(csv.reader(handle))
    assert rows[0][:3] == ["value", "t", "I"]
    assert len(rows) == 1 + 3 * 201
    assert {row[0] for row in rows[1:]} == {"0.0", "1.0", "5.0"}
    distances = np.array(result.distances)
    assert np.allclose(distances, distances.T)
    assert np.allclose(np.diag(distances), 0.0)
    member = scenario_variant(cfg, "kappa", 1.0).name
    assert member == "budget_kappa_kappa_1.0"
    assert result.reports[1].trajectory_path == str(tmp_path / f"{member}.csv")
    assert (tmp_path / f"{member}.csv").exists()
    assert (tmp_path / "budget_kappa_kappa_sweep.csv").exists()


@pytest.mark.slow
def test_budget_closed_loop(graph, load_scenario):
    summary = graph.run_scenario(load_scenario("budget_run.json")).summary
    assert summary.terminal["I"] / summary.i_star == pytest.approx(1.0, abs=0.01)
    assert summary.terminal_cost == pytest.approx(0.15, abs=0.002)
    assert summary.terminal["B"] == pytest.approx(summary.design.beta_star, abs=1e-3)
    assert summary.settling_time is not None


@pytest.mark.slow
def test_kappa_reduces_the_overshoot(load_scenario):
    result = sweep(load_scenario("budget_kappa.json", horizon=1500), "kappa", [0.0, 1.0, 2.0, 5.0])
    peaks = [r.summary.peak_ratio for r in result.reports]
    assert all(a >= b - 1e-9 for a, b in zip(peaks, peaks[1:]))


@pytest.mark.slow
def test_upsilon_sweep_report(load_scenario):
    result = sweep(load_scenario("redesign_upsilon.json"), "upsilon", [1.0, 2.0, 3.0])
    for report in result.reports:
        check = report.summary.bound_checks[0]
        assert check.passed
        assert check.max_infected <= check.bound + 1e-6
    # oscillation grows with the mechanism gain
    peaks = [r.summary.peak_ratio for r in result.reports]
    assert all(a <= b + 1e-9 for a, b in zip(peaks, peaks[1:]))


@pytest.mark.slow
def test_noise_families_track_the_logit_run(load_scenario):
    families = ["logit", "gumbel", "normal", "laplace", "gev", "logistic"]
    result = sweep(load_scenario("budget_run.json", horizon=1500, dt=0.1), "noise_dist", families)
    assert [r.error for r in result.reports] == [None] * len(families)
    from_logit = dict(zip(families, np.array(result.distances)[0]))
    # Gumbel noise with unit scale is the unit logit; GEV with shape 0 is Gumbel
    assert from_logit["gumbel"] < 1e-3
    assert from_logit["gev"] < 1e-3
    for family in ("normal", "laplace", "logistic"):
        assert 0.0 < from_logit[family] < 0.5


@pytest.mark.slow
def test_gated_rollout_limits_the_overshoot(graph, load_scenario):
    switched = graph.run(load_scenario("learning_switch.json"))
    gated = graph.run(load_scenario("learning_gated.json"))
    t0 = switched.t0
    assert gated.t0 == t0

    def peak_after_t0(state):
        traj = state.trajectory
        return traj.I[traj.times >= t0].max()

    assert peak_after_t0(gated) <= peak_after_t0(switched)
    kinds = [e.kind for e in gated.report.summary.events]
    assert kinds[:2] == ["initial", "retarget"]
    assert "gate" in kinds
    gate_alphas = [e.alpha for e in gated.report.summary.events if e.kind == "gate"]
    assert max(gate_alphas) <= 4e-4 + 1e-12
    assert all(check.passed for check in gated.report.summary.bound_checks)
