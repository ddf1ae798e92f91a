import logging
from typing import Callable, List, Optional, Tuple

import numpy as np

from core.choice import PerturbationModel
from core.dynamics import ClosedLoop, Trajectory, integrate
from models.errors import EPGError
from models.schemas import AppliedEvent, ClosedLoopState, GraphState, MechanismDesign, RedesignEvent

logger = logging.getLogger(__name__)

# An action receives the state and design at its time and returns the new design
# (or None to leave it unchanged) together with the event kind.
Action = Callable[[ClosedLoopState, MechanismDesign], Tuple[Optional[MechanismDesign], str]]


def lyapunov_level(state: GraphState, md: MechanismDesign, s: ClosedLoopState) -> Optional[float]:
    """Closed-loop Lyapunov value at ``s`` under ``md``; None without an explicit Q."""
    if not isinstance(state.model, PerturbationModel):
        return None
    loop = ClosedLoop(state.scenario.epidemic, md, state.model)
    return float(loop.lyapunov(s.as_array()[None, :])[0])


def _explicit(event: RedesignEvent) -> Action:
    def apply(s, md):
        update = {
            key: value
            for key, value in event.model_dump(include={"beta_bar", "r_bar", "upsilon", "kappa"}).items()
            if value is not None
        }
        return md.model_copy(update=update), "redesign"

    return apply


def _switch(state: GraphState) -> Action:
    def apply(s, md):
        return md.model_copy(update={"r_bar": state.design.r_star, "beta_bar": state.design.beta_star}), "switch"

    return apply


def _retarget(state: GraphState) -> Action:
    def apply(s, md):
        return md.model_copy(update={"beta_bar": state.design.beta_star}), "retarget"

    return apply


def _gate(state: GraphState) -> Action:
    """Move r_bar along the segment toward r* as far as the alpha gate allows."""
    planner = state.scenario.planner
    target = np.asarray(state.design.r_star)

    def apply(s, md):
        current = np.asarray(md.r_bar)
        if np.allclose(current, target, rtol=0.0, atol=1e-12):
            return None, "gate"

        def candidate(step: float) -> MechanismDesign:
            return md.model_copy(update={"r_bar": (current + step * (target - current)).tolist()})

        def level(step: float) -> float:
            return lyapunov_level(state, candidate(step), s)

        if level(1.0) <= planner.alpha_gate:
            return candidate(1.0), "gate"
        if level(0.0) > planner.alpha_gate:
            return None, "gate"
        lo, hi = 0.0, 1.0
        for _ in range(planner.line_search_iters):
            mid = 0.5 * (lo + hi)
            if level(mid) <= planner.alpha_gate:
                lo = mid
            else:
                hi = mid
        return (candidate(lo), "gate") if lo > 0 else (None, "gate")

    return apply


def _schedule(state: GraphState) -> List[Tuple[float, Action]]:
    scenario = state.scenario
    actions = [(event.t, _explicit(event)) for event in scenario.events]
    planner = scenario.planner
    if planner is not None and state.t0 is not None and state.t0 <= scenario.horizon:
        if planner.policy == "switch":
            actions.append((state.t0, _switch(state)))
        else:
            actions.append((state.t0, _retarget(state)))
            gate = _gate(state)
            t = state.t0 + planner.gate_every
            while t <= scenario.horizon:
                actions.append((t, gate))
                t += planner.gate_every
    return sorted(actions, key=lambda item: item[0])


def simulate_scenario_node(state: GraphState) -> GraphState:
    """Integrate piecewise between scheduled events, applying each at its time.

    Each applied event records the Lyapunov level it starts from (alpha),
    which the evaluation node turns into an anytime-bound check.
    """
    if state.error:
        return state
    try:
        scenario = state.scenario
        ep, model = scenario.epidemic, state.model
        # The starting design gets an event too, so its alpha is checked like
        # any later redesign.
        md, s, t = state.mechanism, state.initial, 0.0
        state.events = [
            AppliedEvent(
                t=0.0,
                kind="initial",
                r_bar=md.r_bar,
                beta_bar=md.beta_bar,
                upsilon=md.upsilon,
                kappa=md.kappa,
                alpha=lyapunov_level(state, md, s),
            )
        ]
        segments: List[Trajectory] = []
        for when, action in _schedule(state):
            # Integrate up to the event, then let the action inspect the state
            # it lands on. Actions may decline (gate already met, no step fits).
            if when > t:
                segments.append(integrate(s, ep, md, model, when, scenario.dt, t_start=t))
                s, t = segments[-1].state(), when
            updated, kind = action(s, md)
            if updated is None:
                continue
            md = updated.validate_for(ep)
            # Level the new design starts from; becomes this segment's alpha.
            alpha = lyapunov_level(state, md, s)
            state.events.append(
                AppliedEvent(
                    t=t,
                    kind=kind,
                    r_bar=md.r_bar,
                    beta_bar=md.beta_bar,
                    upsilon=md.upsilon,
                    kappa=md.kappa,
                    alpha=alpha,
                )
            )
            logger.info("t=%g %s: beta_bar=%.5f r_bar=%s", t, kind, md.beta_bar, np.round(md.r_bar, 5).tolist())

        # Tail segment runs to the horizon; only it may stop early.
        segments.append(
            integrate(
                s,
                ep,
                md,
                model,
                scenario.horizon,
                scenario.dt,
                t_start=t,
                stop_at_equilibrium=scenario.stop_at_equilibrium,
            )
        )
        # Segment boundaries share a point; concat drops the duplicate.
        state.trajectory = Trajectory.concat(segments)
        state.mechanism = md
        return state

    except EPGError as e:
        # Keep the error on the state; evaluation and formatting pass it through.
        state.error = f"Error in simulation: {e}"
        state.error_kind = e.kind
        return state
