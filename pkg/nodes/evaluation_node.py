import logging
from pathlib import Path
from typing import List, Optional

import numpy as np
from scipy.integrate import trapezoid

from core.bounds import anytime_bound_check
from core.choice import NoiseModel, mc_choice
from core.dynamics import Trajectory, endemic_equilibrium
from models.errors import EPGError
from models.schemas import BoundReport, GraphState, MechanismDesign, RunSummary, SegmentStats

logger = logging.getLogger(__name__)

SETTLING_BAND = 0.01


def settling_time(times: np.ndarray, ratio: np.ndarray, band: float = SETTLING_BAND) -> Optional[float]:
    """First time after which |ratio - 1| stays within ``band``; None if it never settles."""
    outside = np.abs(ratio - 1.0) > band
    if outside[-1]:
        return None
    if not outside.any():
        return float(times[0])
    return float(times[np.flatnonzero(outside)[-1] + 1])


def _windows(state: GraphState, end: float):
    """(start, end, event) per interval in which one design stays in force."""
    events = state.events
    for k, event in enumerate(events):
        stop = events[k + 1].t if k + 1 < len(events) else end
        yield event.t, stop, event


def _segments(state: GraphState, traj: Trajectory) -> List[SegmentStats]:
    stats = []
    end = float(traj.times[-1])
    for start, stop, event in _windows(state, end):
        mask = (traj.times >= start) & (traj.times <= stop)
        if not mask.any():
            continue
        i_star, _ = endemic_equilibrium(event.beta_bar, state.scenario.epidemic)
        t, cost = traj.times[mask], traj.cost[mask]
        mean_cost = float(trapezoid(cost, t) / (t[-1] - t[0])) if t[-1] > t[0] else float(cost[0])
        stats.append(
            SegmentStats(start=start, end=stop, peak_ratio=float(traj.I[mask].max() / i_star), mean_cost=mean_cost)
        )
    return stats


def _bound_checks(state: GraphState, traj: Trajectory) -> List[BoundReport]:
    reports = []
    end = float(traj.times[-1])
    for start, stop, event in _windows(state, end):
        if event.alpha is None:
            continue
        in_force = (traj.times >= start) & (traj.times <= stop)
        if not in_force.any():
            continue
        md = event.mechanism(state.mechanism.h_variant)
        window = Trajectory(
            traj.times[in_force],
            traj.states[in_force],
            traj.transmission[in_force],
            traj.rewards[in_force],
            traj.cost[in_force],
            traj.lyapunov[in_force],
        )
        report = anytime_bound_check(window, event.alpha, md, state.scenario.epidemic)
        if not report.passed:
            logger.warning("anytime bound violated after t=%g: %g > %g", start, report.max_infected, report.bound)
        reports.append(report)
    return reports


def _mc_discrepancy(state: GraphState) -> Optional[float]:
    choice = state.scenario.choice
    if choice.kind != "mc" or not isinstance(state.model, NoiseModel):
        return None
    ep, md = state.scenario.epidemic, state.events[0]
    p0 = state.initial.q * ep.beta + np.asarray(md.r_bar) - ep.c_tilde
    sampled = mc_choice(state.model, p0, choice.samples, choice.seed)
    return float(np.max(np.abs(sampled - state.model.choice(p0))))


def evaluate_run_node(state: GraphState) -> GraphState:
    """Summarize the trajectory and write it as CSV when an output directory is set."""
    if state.error:
        return state
    try:
        scenario, traj = state.scenario, state.trajectory
        md: MechanismDesign = state.mechanism
        # Ratios are against the equilibrium of the design in force at the end.
        i_star, _ = endemic_equilibrium(md.beta_bar, scenario.epidemic)
        ratio = traj.I / i_star
        final = traj.state()
        state.summary = RunSummary(
            terminal={
                "t": float(traj.times[-1]),
                "I": final.I,
                "R": final.R,
                "S": final.S,
                "x": final.x,
                "q": final.q,
                "B": float(traj.transmission[-1]),
            },
            i_star=i_star,
            peak_ratio=float(ratio.max()),
            terminal_cost=float(traj.cost[-1]),
            settling_time=settling_time(traj.times, ratio),
            settled_early=traj.settled_early,
            segments=_segments(state, traj),
            bound_checks=_bound_checks(state, traj),
            design=state.design,
            mu_history=state.waves,
            t0=state.t0,
            events=state.events,
            mc_discrepancy=_mc_discrepancy(state),
        )
        # Files only when asked for; the API never sets output_dir.
        if scenario.output_dir:
            path = Path(scenario.output_dir) / f"{scenario.name}.csv"
            state.trajectory_path = str(traj.to_csv(path))
        logger.info(
            "%s: peak I/I*=%.4f terminal cost=%.5f settled at %s",
            scenario.name,
            state.summary.peak_ratio,
            state.summary.terminal_cost,
            state.summary.settling_time,
        )
        return state

    except EPGError as e:
        state.error = f"Error in evaluation: {e}"
        state.error_kind = e.kind
        return state
    except OSError as e:
        # A run that finished but could not be saved still reports the failure.
        state.error = f"Error writing trajectory: {e}"
        state.error_kind = "io"
        return state
