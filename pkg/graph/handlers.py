"""Request handlers shared by the CLI subcommands and the REST endpoints."""

import logging

from core.bounds import anytime_bound, redesign_alpha
from core.choice import PerturbationModel, model_from_spec
from core.design import optimize_reward, solve_qbar
from core.learning import survey_schedule
from models.errors import ConfigError
from models.schemas import AnytimeBound, BoundRequest, DesignRequest, DesignSolution, LearnReport, LearnRequest

logger = logging.getLogger(__name__)


def handle_design(req: DesignRequest) -> DesignSolution:
    """Optimal (r*, beta*) for the budget, plus q_bar for the requested or optimal pair."""
    ep = req.epidemic
    model = model_from_spec(req.choice, ep.n)
    solution = optimize_reward(req, model=model, seed=req.seed)
    beta_bar = req.beta_bar if req.beta_bar is not None else solution.beta_star
    r_bar = req.r_bar if req.r_bar is not None else solution.r_star
    if len(r_bar) != ep.n:
        raise ConfigError(f"r_bar must have {ep.n} entries")
    return solution.model_copy(update={"q_bar": solve_qbar(beta_bar, r_bar, ep, model)})


def handle_bound(req: BoundRequest) -> AnytimeBound:
    """Anytime bound from an explicit alpha or from a prior-to-new reward switch."""
    ep = req.epidemic
    alpha = req.alpha
    if alpha is None:
        model = model_from_spec(req.choice, ep.n)
        if not isinstance(model, PerturbationModel):
            raise ConfigError("a redesign alpha needs a logit or log-barrier choice model")
        pair = req.redesign
        alpha = redesign_alpha(pair.r_prior, pair.r_bar, req.beta_bar, req.upsilon, model, ep, q0=pair.q0)
    return anytime_bound(alpha, req.beta_bar, req.upsilon, ep)


def handle_learn(req: LearnRequest) -> LearnReport:
    """Survey waves, t0 and the mu estimate at t0 (or after the last wave)."""
    ep = req.epidemic
    base = model_from_spec(req.choice, ep.n)
    waves, t0 = survey_schedule(req.mu_true, req.survey, base, req.accuracy, ep)
    chosen = next(w for w in waves if w.t == t0) if t0 is not None else waves[-1]
    return LearnReport(waves=waves, t0=t0, mu_hat=chosen.mu_hat, mu=chosen.mu)
