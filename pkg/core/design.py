"""Planner design problems: the stationary mechanism state and budget-optimal rewards."""

import logging
from typing import Callable, Optional, Tuple

import numpy as np
from joblib import Parallel, delayed
from scipy.optimize import brentq, minimize, minimize_scalar

import config
from core.choice import ChoiceModel, choice_function, choice_sensitivity, model_from_spec
from models.errors import DomainError, InfeasibilityError, SolverError
from models.schemas import DesignProblem, DesignSolution, EpidemicParams

logger = logging.getLogger(__name__)


def newton_bisection(
    func: Callable[[float], Tuple[float, float]],
    lo: float,
    hi: float,
    tol: float,
    max_iter: int = 200,
) -> float:
    """Root of an increasing ``func`` (returning value and slope) bracketed by [lo, hi].

    Newton steps are taken while they stay inside the bracket and shrink it
    fast enough; otherwise the bracket is bisected. Stops when |f| <= tol.
    """
    f_lo, _ = func(lo)
    f_hi, _ = func(hi)
    if f_lo > 0 or f_hi < 0:
        raise InfeasibilityError(f"[{lo}, {hi}] does not bracket a root")
    x = 0.5 * (lo + hi)
    step_old = hi - lo
    f, df = func(x)
    for _ in range(max_iter):
        if abs(f) <= tol:
            return x
        if f < 0:
            lo = x
        else:
            hi = x
        newton_ok = df > 0 and lo < x - f / df < hi and abs(2.0 * f) <= abs(step_old * df)
        if newton_ok:
            step_old = f / df
            x = x - step_old
        else:
            step_old = 0.5 * (hi - lo)
            x = lo + step_old
        if hi - lo <= 1e-15 * max(1.0, abs(x)):
            return x
        f, df = func(x)
    raise SolverError(f"newton-bisection hit {max_iter} iterations", last_iterate=[x], residual=abs(f))


def solve_qbar(
    beta_bar: float, r_bar, ep: EpidemicParams, model: ChoiceModel, tol: float = config.DESIGN_TOL
) -> float:
    """Stationary mechanism state q_bar with beta' C(q_bar beta + r_bar - c_tilde) = beta_bar."""
    if not ep.beta_vec[0] < beta_bar < ep.beta_vec[-1]:
        raise DomainError(f"beta_bar={beta_bar} outside ({ep.beta_vec[0]}, {ep.beta_vec[-1]})")
    base = np.asarray(r_bar, dtype=float) - ep.c_tilde
    beta = ep.beta

    def residual(q: float) -> Tuple[float, float]:
        p = q * beta + base
        value = float(beta @ choice_function(model, p)) - beta_bar
        return value, choice_sensitivity(model, p, beta)

    f0, _ = residual(0.0)
    if abs(f0) <= tol:
        return 0.0
    direction = 1.0 if f0 < 0 else -1.0
    edge = 1.0
    while (residual(direction * edge)[0] < 0) == (f0 < 0):
        edge *= 2.0
        if edge > config.QBAR_LIMIT:
            raise InfeasibilityError(f"no q within +/-{config.QBAR_LIMIT:g} reaches beta_bar={beta_bar}")
    lo, hi = sorted((0.0, direction * edge))
    q_bar = newton_bisection(residual, lo, hi, tol)
    logger.debug("q_bar=%.12g for beta_bar=%g", q_bar, beta_bar)
    return q_bar


def stationary_cost(
    beta_bar: float,
    r_bar,
    ep: EpidemicParams,
    model: ChoiceModel,
    h_variant: str = "nonnegative",
    tol: float = config.DESIGN_TOL,
) -> float:
    """Long-run spend r'x at the equilibrium reached under (beta_bar, r_bar)."""
    q_bar = solve_qbar(beta_bar, r_bar, ep, model, tol)
    raw = q_bar * ep.beta + np.asarray(r_bar, dtype=float)
    x = choice_function(model, raw - ep.c_tilde)
    if h_variant == "nonnegative":
        raw = raw - raw.min()
    return float(raw @ x)


# --- Optimal reward ----------------------------------------------------------


class _RewardProblem:
    """Objective beta' C(r - c_tilde) and spend r' C(r - c_tilde) for one design problem."""

    def __init__(self, ep: EpidemicParams, model: ChoiceModel, budget: float):
        self.ep, self.model, self.budget = ep, model, budget
        self.beta, self.c_tilde = ep.beta, ep.c_tilde
        self.penalty = 100.0 * (self.beta[-1] - self.beta[0]) / budget + 1.0

    def choice(self, r: np.ndarray) -> np.ndarray:
        return choice_function(self.model, r - self.c_tilde)

    def objective(self, r: np.ndarray) -> float:
        return float(self.beta @ self.choice(r))

    def spend(self, r: np.ndarray) -> float:
        return float(r @ self.choice(r))

    def penalized(self, r: np.ndarray) -> float:
        excess = max(self.spend(r) - self.budget, 0.0) + float(np.sum(np.clip(-r, 0.0, None)))
        return self.objective(r) + self.penalty * excess

    def repair(self, r: np.ndarray) -> np.ndarray:
        """Shift r so its smallest entry is 0, then pull it back along the ray onto the budget."""
        r = np.clip(r, 0.0, None)
        r = r - r.min()
        if self.spend(r) <= self.budget + config.FEASIBILITY_TOL:
            return r
        t = brentq(lambda s: self.spend(s * r) - self.budget, 0.0, 1.0, xtol=1e-15)
        return t * r


def _reward_active(problem: _RewardProblem) -> Optional[float]:
    """n = 2: reward on strategy 1 that exhausts the budget, or None if monotonicity fails."""
    r_of = lambda s: np.array([s, 0.0])
    hi = max(problem.budget, 1.0)
    while problem.spend(r_of(hi)) < problem.budget:
        hi *= 2.0
        if hi > config.QBAR_LIMIT:
            raise InfeasibilityError("budget cannot be exhausted by any reward")
    grid = np.linspace(0.0, hi, 64)
    objective = np.array([problem.objective(r_of(s)) for s in grid])
    spend = np.array([problem.spend(r_of(s)) for s in grid])
    if np.any(np.diff(objective) > 1e-14) or np.any(np.diff(spend) < -1e-14):
        logger.warning("objective or spend not monotone in r_1; using multistart search")
        return None
    return brentq(lambda s: problem.spend(r_of(s)) - problem.budget, 0.0, hi, xtol=1e-14, rtol=1e-14)


def _polish(problem: _RewardProblem, r: np.ndarray, sweeps: int = 3) -> np.ndarray:
    """Coordinate-wise bounded Brent on the penalized objective."""
    r = r.copy()
    for _ in range(sweeps):
        for i in range(len(r)):
            upper = max(2.0 * r[i], problem.budget / max(problem.choice(r)[i], 1e-12), 1e-6)

            def along(v, i=i):
                trial = r.copy()
                trial[i] = v
                return problem.penalized(trial)

            res = minimize_scalar(along, bounds=(0.0, upper), method="bounded", options={"xatol": 1e-12})
            if res.fun < problem.penalized(r):
                r[i] = res.x
    return problem.repair(r)


def _run_start(problem: _RewardProblem, r0: np.ndarray) -> np.ndarray:
    n = len(r0)
    res = minimize(
        problem.penalized,
        r0,
        method="Nelder-Mead",
        options={"xatol": 1e-10, "fatol": 1e-13, "maxiter": 4000 * n, "adaptive": n > 2},
    )
    return _polish(problem, problem.repair(res.x))


def optimize_reward(
    dp: DesignProblem,
    tol: float = config.DESIGN_TOL,
    model: Optional[ChoiceModel] = None,
    starts: int = config.DESIGN_STARTS,
    seed: int = 0,
) -> DesignSolution:
    """Budget-constrained minimizer r* of beta' C(r - c_tilde) and beta* = beta' C(r* - c_tilde).

    Two strategies reduce to a 1-D root of the active budget constraint
    (r_2 = 0). Otherwise, or when monotonicity fails on the audit grid,
    exact-penalty Nelder-Mead runs from several starts concurrently;
    ties within ``tol`` go to the smallest ||r||_1.
    """
    ep = dp.epidemic
    model = model or model_from_spec(dp.choice, ep.n)
    if dp.budget >= ep.c_tilde[0]:
        logger.warning("budget %g is not below c_tilde_1=%g", dp.budget, ep.c_tilde[0])
    problem = _RewardProblem(ep, model, dp.budget)

    if ep.n == 2:
        s = _reward_active(problem)
        if s is not None:
            r = np.array([s, 0.0])
            return _solution(problem, r, "active_constraint", 1, 0.0)

    rng = np.random.default_rng(seed)
    scale = 2.0 * dp.budget * ep.n
    initial = [np.full(ep.n, dp.budget)] + [rng.uniform(0.0, scale, ep.n) for _ in range(starts - 1)]
    candidates = Parallel(n_jobs=config.MAX_WORKERS, backend="threading")(
        delayed(_run_start)(problem, r0) for r0 in initial
    )
    values = np.array([problem.objective(r) for r in candidates])
    best = values.min()
    tied = [k for k in range(len(candidates)) if values[k] <= best + tol]
    pick = min(tied, key=lambda k: (float(np.sum(candidates[k])), k))
    dispersion = float(values.max() - values.min())
    logger.debug("multistart objectives %s", np.array2string(values, precision=10))
    return _solution(problem, candidates[pick], "multistart", len(initial), dispersion)


def _solution(problem: _RewardProblem, r: np.ndarray, method: str, starts: int, dispersion: float) -> DesignSolution:
    x = problem.choice(r)
    solution = DesignSolution(
        r_star=r.tolist(),
        beta_star=float(problem.beta @ x),
        x_star=x.tolist(),
        cost=float(r @ x),
        method=method,
        starts=starts,
        dispersion=dispersion,
    )
    logger.info("design: r*=%s beta*=%.6f spend=%.6f", np.round(r, 6).tolist(), solution.beta_star, solution.cost)
    return solution
