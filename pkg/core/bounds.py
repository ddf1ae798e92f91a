"""Lyapunov storage of the epidemic subsystem and the anytime bound on I(t).

The storage is written in the scaled coordinates cal_I = B I and
cal_R = B R, whose endemic targets are Ihat_c = eta (B - sigma) and
Rhat_c = (1 - eta)(B - sigma).
"""

import logging
from typing import TYPE_CHECKING, Optional

import numpy as np
from scipy.optimize import brentq, minimize_scalar

import config
from core.choice import PerturbationModel, choice_function, perturbed_max
from models.errors import ContractError, DomainError, InfeasibilityError, ParameterError
from models.schemas import AnytimeBound, BoundReport, EpidemicParams, MechanismDesign

if TYPE_CHECKING:
    from core.dynamics import Trajectory

logger = logging.getLogger(__name__)


def epg_storage(cal_i, cal_r, transmission, ep: EpidemicParams, beta_bar: float, upsilon: float):
    """S_EPG(cal_I, cal_R, B); accepts scalars or equally shaped arrays."""
    cal_i = np.asarray(cal_i, dtype=float)
    cal_r = np.asarray(cal_r, dtype=float)
    transmission = np.asarray(transmission, dtype=float)
    if np.any(cal_i <= 0):
        raise DomainError("cal_I must be positive")
    if np.any(transmission <= ep.sigma):
        raise DomainError(f"B must exceed sigma={ep.sigma}")
    gap = transmission - ep.sigma
    i_hat = ep.eta * gap
    r_hat = (1.0 - ep.eta) * gap
    value = (
        (cal_i - i_hat)
        + i_hat * np.log(i_hat / cal_i)
        + (cal_r - r_hat) ** 2 / (2.0 * ep.gamma)
        + 0.5 * upsilon**2 * (transmission - beta_bar) ** 2
    )
    return float(value) if value.ndim == 0 else value


def _excess_ratio(budget: float) -> float:
    """Largest u >= 1 with u - 1 - ln u = budget."""
    if budget <= 0:
        return 1.0
    return brentq(lambda u: u - 1.0 - np.log(u) - budget, 1.0, 2.0 * (budget + 1.0), xtol=1e-14)


def _sublevel_ratio(transmission: float, alpha: float, beta_bar: float, upsilon: float, ep: EpidemicParams) -> float:
    """max cal_I / B over the alpha-sublevel set at fixed B (cal_R = Rhat_c)."""
    budget = alpha - 0.5 * upsilon**2 * (transmission - beta_bar) ** 2
    if budget < 0:
        return -np.inf
    i_hat = ep.eta * (transmission - ep.sigma)
    return _excess_ratio(budget / i_hat) * i_hat / transmission


def pi_upsilon(
    alpha: float, beta_bar: float, upsilon: float, ep: EpidemicParams, tol: float = config.BOUND_TOL
) -> float:
    """Anytime-bound factor: sup {cal_I / B : S_EPG <= alpha} / Ibar.

    cal_R sits at its target (it only enters through a square). For each B
    the largest admissible cal_I solves the entropy-like equation in closed
    bracket; the outer maximization over B scans a grid and polishes the
    best cell with bounded Brent.
    """
    if alpha < 0:
        raise ParameterError(f"alpha must be nonnegative, got {alpha}")
    if beta_bar <= ep.sigma:
        raise DomainError(f"beta_bar={beta_bar} <= sigma={ep.sigma}")
    if alpha == 0:
        return 1.0
    i_bar = ep.eta * (1.0 - ep.sigma / beta_bar)
    half_width = np.sqrt(2.0 * alpha) / upsilon
    lo = max(ep.sigma + config.BOUND_SIGMA_MARGIN, beta_bar - half_width)
    hi = min(ep.beta_vec[-1], beta_bar + half_width)
    if hi <= lo:
        return 1.0

    grid = np.linspace(lo, hi, config.BOUND_GRID)
    values = np.array([_sublevel_ratio(b, alpha, beta_bar, upsilon, ep) for b in grid])
    k = int(np.argmax(values))
    best = values[k]
    left, right = grid[max(k - 1, 0)], grid[min(k + 1, len(grid) - 1)]
    if right > left:
        polish = minimize_scalar(
            lambda b: -_sublevel_ratio(b, alpha, beta_bar, upsilon, ep),
            bounds=(left, right),
            method="bounded",
            options={"xatol": tol},
        )
        best = max(best, -polish.fun)
    logger.debug("pi_upsilon(alpha=%g) sup at B~%g", alpha, grid[k])
    return max(float(best / i_bar), 1.0)


def anytime_bound(alpha: float, beta_bar: float, upsilon: float, ep: EpidemicParams) -> AnytimeBound:
    factor = pi_upsilon(alpha, beta_bar, upsilon, ep)
    i_bar = ep.eta * (1.0 - ep.sigma / beta_bar)
    return AnytimeBound(alpha=alpha, i_bar=i_bar, factor=factor, bound=i_bar * factor)


def alpha_for_factor(target: float, beta_bar: float, upsilon: float, ep: EpidemicParams) -> float:
    """Largest alpha with pi_upsilon(alpha) <= target (inverse of the factor)."""
    if target < 1:
        raise ParameterError(f"factor target must be at least 1, got {target}")
    if target == 1:
        return 0.0
    hi = 1e-8
    while pi_upsilon(hi, beta_bar, upsilon, ep) < target:
        hi *= 2.0
        if hi > 1e6:
            raise InfeasibilityError(f"no alpha reaches factor {target}")
    return brentq(lambda a: pi_upsilon(a, beta_bar, upsilon, ep) - target, 0.0, hi, xtol=1e-14, rtol=1e-10)


def b_storage(r_o, r_bar, x0, q0: float, model: PerturbationModel, ep: EpidemicParams) -> float:
    """delta-storage at the switch from r_o to r_bar, starting at the prior equilibrium.

    Uses the dual form phi(p_new) - phi(p_old) - x0'(r_bar - r_o), valid
    because x0 = C(p_old).
    """
    r_o = np.asarray(r_o, dtype=float)
    r_bar = np.asarray(r_bar, dtype=float)
    x0 = np.asarray(x0, dtype=float)
    p_old = q0 * ep.beta + r_o - ep.c_tilde
    p_new = q0 * ep.beta + r_bar - ep.c_tilde
    gap = float(np.max(np.abs(x0 - choice_function(model, p_old))))
    if gap > config.CONTRACT_TOL:
        raise ContractError(f"x0 is not the prior equilibrium choice (gap {gap:.2e})")
    return perturbed_max(model, p_new) - perturbed_max(model, p_old) - float(x0 @ (r_bar - r_o))


def redesign_alpha(
    r_o,
    r_bar,
    beta_bar: float,
    upsilon: float,
    model: PerturbationModel,
    ep: EpidemicParams,
    q0: float = 0.0,
    kappa: float = 1.0,
) -> float:
    """Initial Lyapunov level B_S / kappa + upsilon^2 (beta_o - beta_bar)^2 / 2.

    The epidemic terms vanish because (I, R) starts at the endemic point of
    the prior transmission rate beta_o = beta' C(q0 beta + r_o - c_tilde).
    """
    x0 = choice_function(model, q0 * ep.beta + np.asarray(r_o, dtype=float) - ep.c_tilde)
    beta_o = float(ep.beta @ x0)
    weight = 1.0 / kappa if kappa > 0 else 1.0
    return weight * b_storage(r_o, r_bar, x0, q0, model, ep) + 0.5 * upsilon**2 * (beta_o - beta_bar) ** 2


def anytime_bound_check(
    traj: "Trajectory",
    alpha: float,
    md: MechanismDesign,
    ep: EpidemicParams,
    tol: float = 1e-6,
    start: Optional[float] = None,
) -> BoundReport:
    """Compare max I(t) (from ``start`` on) against Ibar * pi_upsilon(alpha)."""
    bound = anytime_bound(alpha, md.beta_bar, md.upsilon, ep)
    infected = traj.I if start is None else traj.I[traj.times >= start]
    peak = float(infected.max())
    return BoundReport(
        alpha=alpha,
        factor=bound.factor,
        bound=bound.bound,
        max_infected=peak,
        margin=bound.bound - peak,
        passed=peak <= bound.bound + tol,
    )
