import csv
import logging
from pathlib import Path
from typing import Any, List, Optional, Sequence

import numpy as np
from joblib import Parallel, delayed
from langgraph.graph import StateGraph, END

import config
from core.dynamics import endemic_equilibrium
from models.errors import ConfigError
from models.schemas import GraphState, RunReport, ScenarioConfig, SweepResult
from nodes import evaluate_run_node, plan_scenario_node, simulate_scenario_node

logger = logging.getLogger(__name__)

SWEEP_PARAMETERS = ("kappa", "upsilon", "noise_dist", "mu")


class ScenarioGraph:
    """Encapsulates the LangGraph workflow that runs one scenario.

    The workflow proceeds through four stages:
    1. "plan"     - choice model, initial state and mechanism design (budget or learning planner)
    2. "simulate" - piecewise RK4 integration across the event schedule
    3. "evaluate" - summary statistics, anytime-bound checks, CSV export
    4. "format_output" - project the state onto the public RunReport

    The CLI, the REST app and sweeps all go through the same compiled graph.
    """

    def __init__(self):
        # Compiled once; sweeps share it across threads.
        self.graph = self._build_graph()

    def _build_graph(self) -> StateGraph:
        workflow = StateGraph(GraphState)

        # Every node takes and returns GraphState.
        workflow.add_node("plan", plan_scenario_node)
        workflow.add_node("simulate", simulate_scenario_node)
        workflow.add_node("evaluate", evaluate_run_node)
        workflow.add_node("format_output", self._format_output_node)

        # Linear flow: plan -> simulate -> evaluate -> format_output -> END.
        # A failed stage leaves state.error set and later stages pass through.
        workflow.set_entry_point("plan")
        workflow.add_edge("plan", "simulate")
        workflow.add_edge("simulate", "evaluate")
        workflow.add_edge("evaluate", "format_output")
        workflow.add_edge("format_output", END)

        return workflow.compile()

    def _format_output_node(self, state: GraphState) -> GraphState:
        """Always leave a well-shaped RunReport on the state, error or not."""
        scenario = state.scenario
        echo = scenario.model_dump(mode="json")
        try:
            if state.error or state.summary is None:
                # Error path: echo the config so the caller can see what failed.
                state.report = RunReport(
                    name=scenario.name,
                    config=echo,
                    error=state.error or "run produced no summary",
                    error_kind=state.error_kind or "numeric",
                )
            else:
                # The trajectory itself stays on the state, not in the report.
                state.report = RunReport(
                    name=scenario.name,
                    trajectory_path=state.trajectory_path,
                    summary=state.summary,
                    config=echo,
                )
            return state

        except Exception as e:
            state.error = f"Error formatting output: {e}"
            state.report = RunReport(name=scenario.name, config=echo, error=state.error, error_kind="numeric")
            return state

    def run(self, cfg: ScenarioConfig) -> GraphState:
        """Run the workflow and return the final state (trajectory included)."""
        logger.info("scenario %s: horizon=%g dt=%g", cfg.name, cfg.horizon, cfg.dt)
        final_state = self.graph.invoke(GraphState(scenario=cfg))
        # LangGraph may hand back a plain dict of channels.
        if isinstance(final_state, dict):
            final_state = GraphState.model_validate(final_state)
        return final_state

    def run_scenario(self, cfg: ScenarioConfig) -> RunReport:
        """Public API: run ``cfg`` and return its RunReport."""
        state = self.run(cfg)
        if state.report is not None:
            return state.report
        return RunReport(
            name=cfg.name,
            config=cfg.model_dump(mode="json"),
            error=state.error or "workflow returned no report",
            error_kind=state.error_kind or "numeric",
        )


_default_graph: Optional[ScenarioGraph] = None


def _graph() -> ScenarioGraph:
    global _default_graph
    if _default_graph is None:
        _default_graph = ScenarioGraph()
    return _default_graph


def run_scenario(cfg: ScenarioConfig) -> RunReport:
    return _graph().run_scenario(cfg)


def scenario_variant(cfg: ScenarioConfig, parameter: str, value: Any) -> ScenarioConfig:
    """Copy of ``cfg`` with one swept parameter replaced."""
    if parameter not in SWEEP_PARAMETERS:
        raise ConfigError(f"cannot sweep {parameter!r}; choose one of {', '.join(SWEEP_PARAMETERS)}")
    data = cfg.model_dump(mode="json")
    choice = data["choice"]
    if parameter in ("kappa", "upsilon"):
        data["mechanism"][parameter] = float(value)
    elif parameter == "mu":
        choice["mu" if choice["kind"] in ("logit", "log_barrier") else "scale"] = float(value)
    elif value == "logit":
        data["choice"] = {"kind": "logit", "mu": choice.get("mu", choice.get("scale", 1.0))}
    else:
        data["choice"] = {"kind": "noise", "dist": value, "scale": choice.get("scale", choice.get("mu", 1.0))}
    data["name"] = f"{cfg.name}_{parameter}_{value}"
    try:
        return ScenarioConfig.model_validate(data)
    except ValueError as e:
        raise ConfigError(str(e)) from e


def _ratio(state: GraphState):
    if state.trajectory is None or state.mechanism is None:
        return None
    i_star, _ = endemic_equilibrium(state.mechanism.beta_bar, state.scenario.epidemic)
    return state.trajectory.times, state.trajectory.I / i_star


def _sup_distances(states: List[GraphState]) -> List[List[float]]:
    curves = [_ratio(s) for s in states]
    size = len(curves)
    distances = np.zeros((size, size))
    for a in range(size):
        for b in range(a + 1, size):
            if curves[a] is None or curves[b] is None:
                distances[a, b] = distances[b, a] = np.nan
                continue
            (ta, ra), (tb, rb) = curves[a], curves[b]
            common = ta[ta <= tb[-1]]
            distances[a, b] = distances[b, a] = float(np.max(np.abs(ra[: len(common)] - np.interp(common, tb, rb))))
    return distances.tolist()


def _write_combined(path: Path, labels: Sequence[str], states: List[GraphState]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        header_written = False
        for label, state in zip(labels, states):
            traj = state.trajectory
            if traj is None:
                continue
            if not header_written:
                writer.writerow(["value"] + traj.header())
                header_written = True
            for row in traj.table():
                writer.writerow([label] + ["%.17g" % v for v in row])
    return path


def sweep(
    cfg: ScenarioConfig, parameter: str, values: Sequence[Any], out_dir: Optional[str] = None
) -> SweepResult:
    """Run one scenario per value concurrently and collect overlay data.

    Every member keeps the base seed. With ``out_dir`` each run writes its
    own CSV and a combined tidy CSV is written next to them.
    """
    variants = [scenario_variant(cfg, parameter, value) for value in values]
    # Variants are independent runs; results come back in value order.
    if out_dir:
        variants = [v.model_copy(update={"output_dir": out_dir}) for v in variants]
    graph = _graph()
    states = Parallel(n_jobs=config.MAX_WORKERS, backend="threading")(delayed(graph.run)(v) for v in variants)

    combined = None
    if out_dir:
        combined = str(_write_combined(Path(out_dir) / f"{cfg.name}_{parameter}_sweep.csv", [str(v) for v in values], states))
    distances = _sup_distances(states)
    logger.info("sweep %s over %s: sup-distances %s", parameter, list(values), np.round(distances, 5).tolist())
    return SweepResult(
        parameter=parameter,
        values=list(values),
        reports=[s.report for s in states],
        combined_path=combined,
        distances=distances,
    )
