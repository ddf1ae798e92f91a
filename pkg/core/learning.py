"""Survey-based estimation of the decision-noise level mu and budget-safe design under it.

Survey answers are realizations of the net reward r_i - c_tilde_i of the
strategy each respondent would pick. With the net-reward range normalized
to 2 the answer variance is at most 1, so Chebyshev gives a
distribution-free interval for E[R], and E[R] is strictly decreasing in mu.
"""

import logging
from typing import List, Optional, Tuple

import numpy as np
from scipy.optimize import brentq

import config
from core.choice import PerturbationModel, choice_function, choice_sensitivity
from core.design import newton_bisection
from models.errors import ContractError, DomainError, InfeasibilityError, InversionError, ParameterError
from models.schemas import (
    CostBound,
    EpidemicParams,
    ExpectationInterval,
    MuInterval,
    SurveyConfig,
    SurveyWave,
)

logger = logging.getLogger(__name__)

SURVEY_RANGE = 2.0


def survey_net_reward(cfg: SurveyConfig, n: int, ep: Optional[EpidemicParams] = None) -> np.ndarray:
    """Net survey reward r - c_tilde with range exactly 2 (rescaled with a warning otherwise)."""
    if cfg.r is None:
        net = np.zeros(n)
        net[0] = SURVEY_RANGE
        return net
    if ep is None:
        raise ParameterError("an explicit survey reward needs the epidemic costs")
    net = np.asarray(cfg.r, dtype=float) - ep.c_tilde
    spread = float(np.ptp(net))
    if spread == 0:
        raise ParameterError("survey net rewards must not all be equal")
    if abs(spread - SURVEY_RANGE) > 1e-12:
        logger.warning("survey net-reward range %g rescaled to %g", spread, SURVEY_RANGE)
        net = net * (SURVEY_RANGE / spread)
    return net


def expected_reward(mu: float, net: np.ndarray, base_model: PerturbationModel) -> float:
    """E[R] = net' C^mu(net)."""
    return float(net @ choice_function(base_model.with_mu(mu), net))


def simulate_survey(
    mu_true: float,
    cfg: SurveyConfig,
    base_model: PerturbationModel,
    ep: Optional[EpidemicParams] = None,
    respondents: Optional[int] = None,
    seed=None,
) -> np.ndarray:
    """Answers of K respondents drawn i.i.d. from C^{mu_true}(net)."""
    if not mu_true > 0:
        raise ParameterError(f"mu_true must be positive, got {mu_true}")
    net = survey_net_reward(cfg, base_model.n, ep)
    probs = choice_function(base_model.with_mu(mu_true), net)
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    picks = rng.choice(len(net), size=respondents or cfg.respondents, p=probs)
    return net[picks]


def chebyshev_interval(samples, confidence: float) -> ExpectationInterval:
    """Sample mean +/- 1 / sqrt(K (1 - confidence))."""
    samples = np.asarray(samples, dtype=float)
    if samples.size == 0:
        raise ParameterError("no survey samples")
    if not 0 < confidence < 1:
        raise ParameterError(f"confidence must lie in (0, 1), got {confidence}")
    if np.ptp(samples) > SURVEY_RANGE + 1e-12:
        raise ContractError(f"sample range {np.ptp(samples):g} exceeds {SURVEY_RANGE:g}")
    k = samples.size
    epsilon = 1.0 / np.sqrt(k * (1.0 - confidence))
    mean = float(samples.mean())
    return ExpectationInterval(
        mean=mean, epsilon=epsilon, lower=mean - epsilon, upper=mean + epsilon, samples=k, confidence=confidence
    )


def _solve_mu(target: float, net: np.ndarray, base_model: PerturbationModel, lo: float, hi: float) -> float:
    return float(
        np.exp(
            brentq(
                lambda s: expected_reward(np.exp(s), net, base_model) - target,
                np.log(lo),
                np.log(hi),
                xtol=config.MU_REL_TOL / 10,
            )
        )
    )


def invert_mu(
    interval: ExpectationInterval,
    net,
    base_model: PerturbationModel,
    mu_range: Tuple[float, float] = (config.MU_MIN, config.MU_MAX),
) -> MuInterval:
    """Map an E[R] interval to [mu_L, mu_U] through the decreasing map mu -> E[R].

    mu_U comes from the lower E[R] endpoint and mu_L from the upper one;
    endpoints beyond ``mu_range`` are clipped and flagged.
    """
    net = np.asarray(net, dtype=float)
    if np.ptp(net) == 0:
        raise ParameterError("net rewards must not all be equal")
    mu_min, mu_max = mu_range
    reach_high = expected_reward(mu_min, net, base_model)
    reach_low = expected_reward(mu_max, net, base_model)
    if interval.upper < reach_low or interval.lower > reach_high:
        raise InversionError(
            f"E[R] interval [{interval.lower:.6g}, {interval.upper:.6g}] outside "
            f"[{reach_low:.6g}, {reach_high:.6g}] reachable on mu in [{mu_min:g}, {mu_max:g}]"
        )
    clipped_upper = interval.lower <= reach_low
    clipped_lower = interval.upper >= reach_high
    mu_upper = mu_max if clipped_upper else _solve_mu(interval.lower, net, base_model, mu_min, mu_max)
    mu_lower = mu_min if clipped_lower else _solve_mu(interval.upper, net, base_model, mu_min, mu_max)
    if clipped_upper or clipped_lower:
        logger.warning("mu interval clipped to search range (lower=%s, upper=%s)", clipped_lower, clipped_upper)
    return MuInterval(
        mu_lower=mu_lower,
        mu_upper=max(mu_upper, mu_lower),
        confidence=interval.confidence,
        samples=interval.samples,
        clipped_lower=clipped_lower,
        clipped_upper=clipped_upper,
    )


def point_mu(
    mean: float,
    net,
    base_model: PerturbationModel,
    mu_range: Tuple[float, float] = (config.MU_MIN, config.MU_MAX),
) -> float:
    """Invert the pooled sample mean, clipped to ``mu_range``."""
    net = np.asarray(net, dtype=float)
    mu_min, mu_max = mu_range
    if mean >= expected_reward(mu_min, net, base_model):
        return mu_min
    if mean <= expected_reward(mu_max, net, base_model):
        return mu_max
    return _solve_mu(mean, net, base_model, mu_min, mu_max)


# --- Budget-safe design under mu uncertainty ----------------------------------------


def _lambda_root(beta_bar: float, ep: EpidemicParams, unit: PerturbationModel, tol: float) -> float:
    """Negative lam with beta' C^1(lam beta) = beta_bar."""

    def residual(lam: float):
        p = lam * ep.beta
        return float(ep.beta @ choice_function(unit, p)) - beta_bar, choice_sensitivity(unit, p, ep.beta)

    edge = 1.0
    while residual(-edge)[0] > 0:
        edge *= 2.0
        if edge > config.QBAR_LIMIT:
            raise InfeasibilityError(f"no lambda reaches beta_bar={beta_bar}")
    return newton_bisection(residual, -edge, 0.0, tol)


def _bound_value(beta_bar: float, mu_upper: float, ep: EpidemicParams, unit: PerturbationModel, tol: float):
    neutral = float(ep.beta @ choice_function(unit, np.zeros(ep.n)))
    if beta_bar >= neutral:
        return float(ep.c_tilde @ choice_function(unit, np.zeros(ep.n))), 0.0
    lam = _lambda_root(beta_bar, ep, unit, tol)
    value = mu_upper * lam * (beta_bar - ep.beta[-1]) + float(ep.c_tilde @ choice_function(unit, lam * ep.beta))
    return value, lam


def cost_upper_bound(
    beta_bar: float,
    mu_upper: float,
    ep: EpidemicParams,
    base_model: PerturbationModel,
    tol: float = config.DESIGN_TOL,
) -> CostBound:
    """Spend bound mu_U lam (beta_bar - beta_n) + c_tilde' C^1(lam beta) for r_bar = c_tilde.

    Holds for every mu <= mu_U under the nonnegative-incentive reward map.
    """
    if not mu_upper > 0:
        raise ParameterError(f"mu_upper must be positive, got {mu_upper}")
    unit = base_model.with_mu(1.0)
    neutral = float(ep.beta @ choice_function(unit, np.zeros(ep.n)))
    if not ep.beta_vec[0] < beta_bar < neutral:
        raise DomainError(f"beta_bar={beta_bar} must lie in ({ep.beta_vec[0]}, {neutral:.6g})")
    value, lam = _bound_value(beta_bar, mu_upper, ep, unit, tol)
    if not lam < 0:
        raise DomainError(f"lambda={lam} is not negative")
    return CostBound(value=value, lam=lam)


def min_beta_bar(
    mu_upper: float,
    c_star: float,
    ep: EpidemicParams,
    base_model: PerturbationModel,
    tol: float = config.DESIGN_TOL,
) -> float:
    """Smallest beta_bar whose cost bound stays within ``c_star``."""
    unit = base_model.with_mu(1.0)
    neutral = float(ep.beta @ choice_function(unit, np.zeros(ep.n)))
    start_cost = float(ep.c_tilde @ choice_function(unit, np.zeros(ep.n)))
    if start_cost >= c_star:
        raise DomainError(f"budget {c_star} does not cover the no-incentive spend {start_cost:.6g}")

    def excess(beta_bar: float) -> float:
        return _bound_value(beta_bar, mu_upper, ep, unit, tol * 1e-3)[0] - c_star

    lo = neutral
    gap = neutral - ep.beta_vec[0]
    for k in range(1, 60):
        lo = ep.beta_vec[0] + gap * 2.0**-k
        if excess(lo) > 0:
            break
    else:
        logger.warning("cost bound stays within budget down to beta_1; returning beta_1")
        return lo
    beta_min = brentq(excess, lo, neutral, xtol=tol)
    logger.info("beta_bar_min=%.6f for mu_U=%g, c*=%g", beta_min, mu_upper, c_star)
    return beta_min


# --- Survey waves -------------------------------------------------------------------


def survey_schedule(
    mu_true: float,
    cfg: SurveyConfig,
    base_model: PerturbationModel,
    accuracy: float,
    ep: Optional[EpidemicParams] = None,
    t_start: float = 0.0,
    mu_range: Tuple[float, float] = (config.MU_MIN, config.MU_MAX),
) -> Tuple[List[SurveyWave], Optional[float]]:
    """Run ``cfg.waves`` survey waves, pooling answers cumulatively.

    Returns the per-wave history and t0, the first wave time whose
    half-width is within ``accuracy`` (None if never reached).
    """
    net = survey_net_reward(cfg, base_model.n, ep)
    seeds = np.random.SeedSequence(cfg.seed).spawn(cfg.waves)
    pooled = np.empty(0)
    waves: List[SurveyWave] = []
    t0 = None
    for k, seed in enumerate(seeds):
        t = t_start + (k + 1) * cfg.cadence_days
        pooled = np.concatenate([pooled, simulate_survey(mu_true, cfg, base_model, ep, seed=seed)])
        interval = chebyshev_interval(pooled, cfg.confidence)
        mu_interval = invert_mu(interval, net, base_model, mu_range)
        mu_hat = point_mu(interval.mean, net, base_model, mu_range)
        waves.append(SurveyWave(t=t, expectation=interval, mu=mu_interval, mu_hat=mu_hat))
        logger.info(
            "wave %d at t=%g: K=%d E[R]=%.4f+/-%.4f mu in [%.4g, %.4g]",
            k + 1,
            t,
            interval.samples,
            interval.mean,
            interval.epsilon,
            mu_interval.mu_lower,
            mu_interval.mu_upper,
        )
        if t0 is None and interval.epsilon <= accuracy + 1e-12:
            t0 = t
            logger.info("accuracy %g reached at t0=%g", accuracy, t0)
    return waves, t0
