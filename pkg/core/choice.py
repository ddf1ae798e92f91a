"""Choice functions for perturbed best response.

A choice function maps a payoff vector p to the interior simplex point
C(p) = argmax_z (z'p - Q(z)). Three backends are provided:

* the closed-form logit rule (Q = mu * sum z ln z),
* a generic damped-Newton solver for any admissible perturbation Q,
* i.i.d. payoff noise, either integrated by quadrature (deterministic,
  used inside the closed loop) or sampled by Monte-Carlo.

Everything here is pure: models are frozen after construction and may be
shared across threads.
"""

import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np
from scipy import stats
from scipy.special import logsumexp, rel_entr, softmax, xlogy

import config
from models.errors import ParameterError, SolverError
from models.schemas import ChoiceSpec

logger = logging.getLogger(__name__)


# --- Payoff perturbations -------------------------------------------------


class BasePerturbation(ABC):
    """Unscaled perturbation Q-bar on the open simplex of dimension ``n``."""

    # Whether Q extends continuously to the simplex boundary (0 ln 0 = 0).
    allows_boundary = False

    def __init__(self, n: int):
        if n < 2:
            raise ParameterError(f"strategy count must be at least 2, got {n}")
        self.n = n

    @abstractmethod
    def value(self, z: np.ndarray) -> float: ...

    @abstractmethod
    def gradient(self, z: np.ndarray) -> np.ndarray: ...

    @abstractmethod
    def hessian(self, z: np.ndarray) -> np.ndarray: ...


class NegativeEntropy(BasePerturbation):
    """sum z_i ln z_i; scaled by mu it yields the logit rule."""

    allows_boundary = True

    def value(self, z):
        return float(np.sum(xlogy(z, z)))

    def gradient(self, z):
        return np.log(z) + 1.0

    def hessian(self, z):
        return np.diag(1.0 / z)


class LogBarrier(BasePerturbation):
    """-sum ln z_i."""

    def value(self, z):
        return float(-np.sum(np.log(z)))

    def gradient(self, z):
        return -1.0 / z

    def hessian(self, z):
        return np.diag(1.0 / z**2)


class CustomPerturbation(BasePerturbation):
    """User-supplied Q with its gradient and Hessian on the open simplex."""

    def __init__(
        self,
        n: int,
        value: Callable[[np.ndarray], float],
        gradient: Callable[[np.ndarray], np.ndarray],
        hessian: Callable[[np.ndarray], np.ndarray],
    ):
        super().__init__(n)
        self._value, self._gradient, self._hessian = value, gradient, hessian

    def value(self, z):
        return float(self._value(z))

    def gradient(self, z):
        return np.asarray(self._gradient(z), dtype=float)

    def hessian(self, z):
        return np.asarray(self._hessian(z), dtype=float)


@dataclass(frozen=True)
class PerturbationModel:
    """Admissible payoff perturbation mu * Q-bar."""

    base: BasePerturbation
    mu: float = 1.0

    def __post_init__(self):
        if not self.mu > 0:
            raise ParameterError(f"mu must be positive, got {self.mu}")

    @classmethod
    def logit(cls, mu: float, n: int) -> "PerturbationModel":
        return cls(NegativeEntropy(n), mu)

    @property
    def n(self) -> int:
        return self.base.n

    @property
    def is_logit(self) -> bool:
        return isinstance(self.base, NegativeEntropy)

    def with_mu(self, mu: float) -> "PerturbationModel":
        return PerturbationModel(self.base, mu)

    def value(self, z: np.ndarray) -> float:
        return self.mu * self.base.value(z)

    def gradient(self, z: np.ndarray) -> np.ndarray:
        return self.mu * self.base.gradient(z)

    def hessian(self, z: np.ndarray) -> np.ndarray:
        return self.mu * self.base.hessian(z)


# --- Payoff noise -----------------------------------------------------------

_FAMILIES = {
    "gumbel": lambda scale, shape: stats.gumbel_r(scale=scale),
    "normal": lambda scale, shape: stats.norm(scale=scale),
    "laplace": lambda scale, shape: stats.laplace(scale=scale),
    "gev": lambda scale, shape: stats.genextreme(shape, scale=scale),
    "logistic": lambda scale, shape: stats.logistic(scale=scale),
    # scale is the half-width at half-maximum
    "cauchy": lambda scale, shape: stats.cauchy(scale=scale),
}


@dataclass(frozen=True)
class NoiseModel:
    """I.i.d. additive noise v_i on each strategy's payoff.

    ``choice`` integrates C_i(p) = P(p_i + v_i >= max_l p_l + v_l) with
    Gauss-Legendre quadrature in the quantile variable, which keeps the
    closed loop deterministic and smooth.
    """

    dist: str
    n: int
    scale: float = 1.0
    shape: float = 0.0
    nodes: int = config.QUADRATURE_NODES
    _law: object = field(init=False, repr=False, compare=False)
    _points: np.ndarray = field(init=False, repr=False, compare=False)
    _weights: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.dist not in _FAMILIES:
            raise ParameterError(f"unknown noise family {self.dist!r}")
        if not self.scale > 0:
            raise ParameterError(f"noise scale must be positive, got {self.scale}")
        if self.n < 2:
            raise ParameterError(f"strategy count must be at least 2, got {self.n}")
        law = _FAMILIES[self.dist](self.scale, self.shape)
        u, w = np.polynomial.legendre.leggauss(self.nodes)
        u = 0.5 * (u + 1.0)
        object.__setattr__(self, "_law", law)
        object.__setattr__(self, "_points", law.ppf(u))
        object.__setattr__(self, "_weights", 0.5 * w)

    @property
    def law(self):
        """Frozen scipy distribution of a single noise term."""
        return self._law

    def choice(self, p: np.ndarray) -> np.ndarray:
        gaps = p[:, None] - p[None, :]
        cdf = self._law.cdf(self._points[:, None, None] + gaps[None, :, :])
        idx = np.arange(len(p))
        cdf[:, idx, idx] = 1.0
        probs = self._weights @ np.prod(cdf, axis=2)
        return probs / probs.sum()


ChoiceModel = Union[PerturbationModel, NoiseModel]


def model_from_spec(spec: ChoiceSpec, n: int) -> ChoiceModel:
    """Build the choice model described by a config block."""
    if spec.kind == "logit":
        return PerturbationModel.logit(spec.mu, n)
    if spec.kind == "log_barrier":
        return PerturbationModel(LogBarrier(n), spec.mu)
    return NoiseModel(spec.dist, n, spec.scale, spec.shape)


# --- Operations ---------------------------------------------------------------


def logit_choice(p, mu: float) -> np.ndarray:
    """Closed-form logit choice e^{p_i/mu} / sum_l e^{p_l/mu}."""
    if not mu > 0:
        raise ParameterError(f"mu must be positive, got {mu}")
    return softmax(np.asarray(p, dtype=float) / mu)


def _tangent_residual(model: PerturbationModel, p: np.ndarray, z: np.ndarray) -> float:
    g = p - model.gradient(z)
    return float(np.linalg.norm(g - g.mean()))


def _objective(model: PerturbationModel, p: np.ndarray, z: np.ndarray) -> float:
    return float(z @ p) - model.value(z)


def _mirror_ascent(model, p, z, tol, max_iter):
    """Entropic mirror ascent with step halving; fallback when Newton stalls."""
    step = 1.0
    value = _objective(model, p, z)
    for _ in range(max_iter):
        g = p - model.gradient(z)
        if np.linalg.norm(g - g.mean()) <= tol:
            return z
        while step > 1e-300:
            w = np.log(z) + step * (g - g.max())
            candidate = softmax(w)
            if candidate.min() > 0 and _objective(model, p, candidate) >= value:
                break
            step *= 0.5
        z = candidate
        value = _objective(model, p, z)
        step = min(2.0 * step, 1e6)
    residual = _tangent_residual(model, p, z)
    if residual <= tol:
        return z
    raise SolverError(
        f"choice solver did not converge (residual {residual:.3e})", last_iterate=z, residual=residual
    )


def solve_choice(
    model: PerturbationModel,
    p,
    tol: float = config.CHOICE_TOL,
    x0: Optional[np.ndarray] = None,
    max_iter: int = config.CHOICE_MAX_ITER,
) -> np.ndarray:
    """Maximize z'p - Q(z) over the open simplex.

    Damped Newton in reduced coordinates: the largest coordinate is
    eliminated through sum z = 1 and every step is halved until the iterate
    stays strictly inside the simplex and the objective (or, close to the
    optimum, the projected gradient) improves. Stalls hand over to entropic
    mirror ascent.
    """
    if not tol > 0:
        raise ParameterError(f"tol must be positive, got {tol}")
    p = np.asarray(p, dtype=float)
    n = model.n
    if p.shape != (n,):
        raise ParameterError(f"payoff has shape {p.shape}, expected ({n},)")

    if x0 is not None and np.min(x0) > 0:
        z = np.asarray(x0, dtype=float) / np.sum(x0)
    else:
        z = np.full(n, 1.0 / n)

    stalled = False
    for _ in range(max_iter):
        g = p - model.gradient(z)
        residual = float(np.linalg.norm(g - g.mean()))
        if residual <= tol:
            return z
        k = int(np.argmax(z))
        keep = np.arange(n) != k
        basis = np.zeros((n, n - 1))
        basis[keep, np.arange(n - 1)] = 1.0
        basis[k, :] = -1.0
        grad_r = basis.T @ g
        hess_r = basis.T @ model.hessian(z) @ basis
        try:
            direction = basis @ np.linalg.solve(hess_r, grad_r)
        except np.linalg.LinAlgError:
            stalled = True
            break
        slope = float(grad_r @ np.linalg.solve(hess_r, grad_r))
        value = _objective(model, p, z)
        t = 1.0
        while True:
            candidate = z + t * direction
            if candidate.min() > 0:
                if _objective(model, p, candidate) >= value + 1e-4 * t * slope:
                    break
                if _tangent_residual(model, p, candidate) < residual:
                    break
            t *= 0.5
            if t < 1e-12:
                stalled = True
                break
        if stalled:
            break
        z = candidate / candidate.sum()

    logger.warning("newton %s; switching to mirror ascent", "stalled" if stalled else "hit cap")
    return _mirror_ascent(model, p, z, tol, config.MIRROR_MAX_ITER)


def choice_function(model: ChoiceModel, p, warm_start: Optional[np.ndarray] = None) -> np.ndarray:
    """Dispatch to the cheapest exact backend for ``model``."""
    p = np.asarray(p, dtype=float)
    if isinstance(model, NoiseModel):
        return model.choice(p)
    if model.is_logit:
        return logit_choice(p, model.mu)
    return solve_choice(model, p, x0=warm_start)


def mc_choice(noise: NoiseModel, p, samples: int, rng_seed) -> np.ndarray:
    """Empirical frequency of argmax(p + v) over ``samples`` noise draws."""
    if samples < 1:
        raise ParameterError(f"samples must be at least 1, got {samples}")
    p = np.asarray(p, dtype=float)
    rng = np.random.default_rng(rng_seed)
    counts = np.zeros(len(p))
    remaining = samples
    while remaining:
        rows = min(remaining, config.MC_CHUNK)
        draws = noise.law.rvs(size=(rows, len(p)), random_state=rng)
        counts += np.bincount(np.argmax(p + draws, axis=1), minlength=len(p))
        remaining -= rows
    return counts / samples


def perturbed_max(model: PerturbationModel, p) -> float:
    """max_z (z'p - Q(z)); mu * logsumexp(p / mu) for the logit rule."""
    p = np.asarray(p, dtype=float)
    if model.is_logit:
        return float(model.mu * logsumexp(p / model.mu))
    y = solve_choice(model, p)
    return _objective(model, p, y)


def delta_storage(model: PerturbationModel, x, p, generic: bool = False) -> float:
    """delta-storage max_z(z'p - Q(z)) - (x'p - Q(x)) of the PBR dynamics.

    Evaluated as the Bregman divergence of Q between x and C(p), which is
    mu * KL(x || C(p)) for the logit rule. Logit accepts boundary x
    (0 ln 0 = 0); other perturbations require interior x.
    """
    if isinstance(model, NoiseModel):
        raise ParameterError("delta-storage needs an explicit perturbation Q")
    x = np.asarray(x, dtype=float)
    p = np.asarray(p, dtype=float)
    if model.is_logit and not generic:
        return float(model.mu * np.sum(rel_entr(x, logit_choice(p, model.mu))))
    if x.min() <= 0:
        if not model.base.allows_boundary:
            raise ParameterError("this perturbation is only defined on the open simplex")
        # boundary state: fall back to the direct definition
        y = solve_choice(model, p)
        return _objective(model, p, y) - (float(x @ p) - model.value(x))
    y = solve_choice(model, p)
    return model.value(x) - model.value(y) - float(model.gradient(y) @ (x - y))


def choice_sensitivity(model: ChoiceModel, p, direction, step: Optional[float] = None) -> float:
    """d' grad_p C(p) d by central differences."""
    p = np.asarray(p, dtype=float)
    d = np.asarray(direction, dtype=float)
    h = config.FD_STEP * (1.0 + np.linalg.norm(p, np.inf)) if step is None else step
    if not h > 0 or np.array_equal(p + h * d, p):
        raise ParameterError(f"finite-difference step {h:g} underflows")
    center = None
    if isinstance(model, PerturbationModel) and not model.is_logit:
        center = solve_choice(model, p)
    plus = choice_function(model, p + h * d, warm_start=center)
    minus = choice_function(model, p - h * d, warm_start=center)
    return float(d @ (plus - minus) / (2.0 * h))
