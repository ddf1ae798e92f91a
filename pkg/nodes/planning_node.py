import logging

import numpy as np

from core.choice import PerturbationModel, choice_function, model_from_spec
from core.design import optimize_reward
from core.dynamics import endemic_equilibrium
from core.learning import min_beta_bar, survey_schedule
from models.errors import ConfigError, EPGError
from models.schemas import ClosedLoopState, DesignProblem, GraphState

logger = logging.getLogger(__name__)


def _initial_state(state: GraphState) -> ClosedLoopState:
    """Explicit initial state, or the endemic point reached under the prior reward."""
    scenario = state.scenario
    if scenario.initial_state is not None:
        return scenario.initial_state
    ep, prior = scenario.epidemic, scenario.prior
    if len(prior.r_bar) != ep.n:
        raise ConfigError(f"prior r_bar must have {ep.n} entries")
    x0 = choice_function(state.model, prior.q * ep.beta + np.asarray(prior.r_bar) - ep.c_tilde)
    i0, r0 = endemic_equilibrium(float(ep.beta @ x0), ep)
    return ClosedLoopState(I=i0, R=r0, x=x0.tolist(), q=prior.q)


def _plan_learning_phase(state: GraphState) -> GraphState:
    """Budget-safe start (r_bar = c_tilde, beta_bar = beta_bar_min) and the survey waves."""
    scenario, planner = state.scenario, state.scenario.planner
    ep = scenario.epidemic
    if not isinstance(state.model, PerturbationModel):
        raise ConfigError("the learning planner needs a logit or log-barrier choice model")

    beta_start = min_beta_bar(planner.mu_upper_prior, planner.budget, ep, state.model)
    state.mechanism = scenario.mechanism.model_copy(
        update={"beta_bar": beta_start, "r_bar": ep.c_tilde.tolist(), "h_variant": "nonnegative"}
    )
    survey = planner.survey.model_copy(update={"seed": scenario.seed})
    state.waves, state.t0 = survey_schedule(planner.mu_true, survey, state.model, planner.accuracy, ep)
    if state.t0 is None:
        logger.warning("survey never reached accuracy %g; keeping the learning-phase design", planner.accuracy)
        return state

    mu_hat = next(wave.mu_hat for wave in state.waves if wave.t == state.t0)
    state.design = optimize_reward(
        DesignProblem(epidemic=ep, choice=scenario.choice, budget=planner.budget),
        model=state.model.with_mu(mu_hat),
        seed=scenario.seed,
    )
    logger.info("planner: beta_bar_min=%.5f, t0=%g, mu_hat=%.4f", beta_start, state.t0, mu_hat)
    return state


def plan_scenario_node(state: GraphState) -> GraphState:
    """Resolve the choice model, the initial mechanism design and the initial state.

    Missing design fields come from the budget problem; a planner block
    replaces the design with its learning-phase choice and precomputes the
    survey waves, t0 and the target (r*, beta*).
    """
    try:
        scenario = state.scenario
        ep = scenario.epidemic
        # Model first: the prior-equilibrium start needs it.
        state.model = model_from_spec(scenario.choice, ep.n)
        state.initial = _initial_state(state)

        # A planner block overrides the budget design; a fully given mechanism skips both.
        if scenario.planner is not None:
            state = _plan_learning_phase(state)
        elif not scenario.mechanism.resolved:
            state.design = optimize_reward(
                DesignProblem(epidemic=ep, choice=scenario.choice, budget=scenario.budget),
                model=state.model,
                seed=scenario.seed,
            )
            update = {}
            if scenario.mechanism.r_bar is None:
                update["r_bar"] = state.design.r_star
            if scenario.mechanism.beta_bar is None:
                update["beta_bar"] = state.design.beta_star
            state.mechanism = scenario.mechanism.model_copy(update=update)
        else:
            state.mechanism = scenario.mechanism

        state.mechanism.validate_for(ep)
        return state

    except EPGError as e:
        state.error = f"Error in planning: {e}"
        state.error_kind = e.kind
        return state
    except ValueError as e:
        # pydantic validation of the copied design and survey
        state.error = f"Error in planning: {e}"
        state.error_kind = "config"
        return state
