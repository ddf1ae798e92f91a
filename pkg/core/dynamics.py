"""Closed loop of the normalized SIRS model, the payoff mechanism and PBR dynamics.

State layout (``ClosedLoopState.as_array``): ``[I, R, x_1..x_n, q]``.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import rel_entr, softmax

import config
from core.bounds import epg_storage
from core.choice import ChoiceModel, NoiseModel, PerturbationModel, choice_function, solve_choice
from models.errors import DomainError, NumericError, ParameterError
from models.schemas import ClosedLoopState, EpidemicParams, MechanismDesign

logger = logging.getLogger(__name__)


def endemic_equilibrium(beta: float, ep: EpidemicParams) -> Tuple[float, float]:
    """(I*, R*) = (eta, 1 - eta) * (1 - sigma / beta)."""
    if beta <= ep.sigma:
        raise DomainError(f"beta={beta} <= sigma={ep.sigma}: no endemic equilibrium")
    level = 1.0 - ep.sigma / beta
    return ep.eta * level, (1.0 - ep.eta) * level


@dataclass
class ClosedLoop:
    """Right-hand side of the closed loop for one (epidemic, mechanism, choice) triple."""

    ep: EpidemicParams
    md: MechanismDesign
    model: ChoiceModel
    beta: np.ndarray = field(init=False, repr=False)
    r_bar: np.ndarray = field(init=False, repr=False)
    c_tilde: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.md.validate_for(self.ep)
        if self.model.n != self.ep.n:
            raise ParameterError(f"choice model has {self.model.n} strategies, expected {self.ep.n}")
        self.beta = self.ep.beta
        self.r_bar = np.asarray(self.md.r_bar, dtype=float)
        self.c_tilde = self.ep.c_tilde

    @property
    def n(self) -> int:
        return self.ep.n

    def payoff(self, q):
        """Net reward p = q beta + r_bar - c_tilde (the H variants differ by a uniform shift)."""
        return np.multiply.outer(q, self.beta) + self.r_bar - self.c_tilde

    def reward(self, q):
        raw = np.multiply.outer(q, self.beta) + self.r_bar
        if self.md.h_variant == "nonnegative":
            raw = raw - raw.min(axis=-1, keepdims=True)
        return raw

    def mechanism_rate(self, I: float, R: float, transmission: float) -> float:
        """G evaluated at (I, R, B)."""
        ep, md = self.ep, self.md
        level = 1.0 - ep.sigma / transmission
        i_hat = ep.eta * level
        r_hat = (1.0 - ep.eta) * level
        return (
            (i_hat - I)
            + ep.eta * (np.log(I) - np.log(i_hat))
            + md.upsilon**2 * (md.beta_bar - transmission)
            + (transmission / ep.gamma) * (R - r_hat) * (1.0 - ep.eta - R)
        )

    def derivative(self, y: np.ndarray, warm_start: Optional[np.ndarray] = None):
        """Return (dy/dt, C(p)) at the packed state ``y``."""
        I, R, q = y[0], y[1], y[-1]
        x = y[2:-1]
        transmission = float(self.beta @ x)
        choice = choice_function(self.model, self.payoff(q), warm_start=warm_start)
        dy = np.empty_like(y)
        dy[0] = (transmission * (1.0 - I - R) - self.ep.sigma) * I
        dy[1] = self.ep.gamma * I - self.ep.omega * R
        dy[2:-1] = choice - x
        dy[-1] = self.md.kappa * self.mechanism_rate(max(I, config.I_FLOOR), R, transmission)
        return dy, choice

    def choice_storage(self, x: np.ndarray, payoff: np.ndarray) -> np.ndarray:
        """Row-wise delta-storage; NaN where no closed-form Q applies."""
        model = self.model
        if isinstance(model, NoiseModel):
            return np.full(len(x), np.nan)
        if model.is_logit:
            return model.mu * np.sum(rel_entr(x, softmax(payoff / model.mu, axis=1)), axis=1)
        values = np.full(len(x), np.nan)
        y = None
        for k in range(len(x)):
            y = solve_choice(model, payoff[k], x0=y)
            if x[k].min() > 0:
                values[k] = model.value(x[k]) - model.value(y) - model.gradient(y) @ (x[k] - y)
        return values

    def lyapunov(self, states: np.ndarray) -> np.ndarray:
        """S(x, p) / kappa + S_EPG; plain sum when kappa = 0."""
        I, R, q = states[:, 0], states[:, 1], states[:, -1]
        x = states[:, 2:-1]
        transmission = x @ self.beta
        weight = 1.0 / self.md.kappa if self.md.kappa > 0 else 1.0
        epg = epg_storage(
            transmission * I, transmission * R, transmission, self.ep, self.md.beta_bar, self.md.upsilon
        )
        return weight * self.choice_storage(x, self.payoff(q)) + epg


def vector_field(
    s: ClosedLoopState, ep: EpidemicParams, md: MechanismDesign, model: ChoiceModel
) -> np.ndarray:
    """(dI, dR, dx, dq) at ``s``, packed like ``ClosedLoopState.as_array``."""
    if s.I <= 0:
        raise DomainError("I must be positive (ln I appears in G)")
    dy, _ = ClosedLoop(ep, md, model).derivative(s.as_array())
    return dy


@dataclass
class Trajectory:
    """Time grid, packed states and the derived series of one run."""

    times: np.ndarray
    states: np.ndarray
    transmission: np.ndarray
    rewards: np.ndarray
    cost: np.ndarray
    lyapunov: np.ndarray
    settled_early: bool = False

    @property
    def n(self) -> int:
        return self.states.shape[1] - 3

    @property
    def I(self) -> np.ndarray:
        return self.states[:, 0]

    @property
    def R(self) -> np.ndarray:
        return self.states[:, 1]

    @property
    def S(self) -> np.ndarray:
        return 1.0 - self.I - self.R

    @property
    def x(self) -> np.ndarray:
        return self.states[:, 2:-1]

    @property
    def q(self) -> np.ndarray:
        return self.states[:, -1]

    def state(self, k: int = -1) -> ClosedLoopState:
        return ClosedLoopState.from_array(self.states[k])

    @classmethod
    def concat(cls, parts: Sequence["Trajectory"]) -> "Trajectory":
        """Join consecutive segments; each later segment's first row repeats the previous end."""
        if not parts:
            raise ParameterError("nothing to concatenate")
        head, tail = parts[0], parts[1:]
        pieces = [head] + [
            cls(
                p.times[1:], p.states[1:], p.transmission[1:], p.rewards[1:], p.cost[1:], p.lyapunov[1:]
            )
            for p in tail
        ]
        return cls(
            times=np.concatenate([p.times for p in pieces]),
            states=np.vstack([p.states for p in pieces]),
            transmission=np.concatenate([p.transmission for p in pieces]),
            rewards=np.vstack([p.rewards for p in pieces]),
            cost=np.concatenate([p.cost for p in pieces]),
            lyapunov=np.concatenate([p.lyapunov for p in pieces]),
            settled_early=parts[-1].settled_early,
        )

    def header(self) -> List[str]:
        n = self.n
        return (
            ["t", "I", "R", "S"]
            + [f"x_{i + 1}" for i in range(n)]
            + ["q", "B"]
            + [f"r_{i + 1}" for i in range(n)]
            + ["cost", "lyapunov"]
        )

    def table(self) -> np.ndarray:
        return np.column_stack(
            [
                self.times,
                self.I,
                self.R,
                self.S,
                self.x,
                self.q,
                self.transmission,
                self.rewards,
                self.cost,
                self.lyapunov,
            ]
        )

    def to_csv(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        np.savetxt(path, self.table(), fmt="%.17g", delimiter=",", header=",".join(self.header()), comments="")
        return path

    @classmethod
    def read_csv(cls, path) -> "Trajectory":
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        n = (data.shape[1] - 8) // 2
        return cls(
            times=data[:, 0],
            states=np.column_stack([data[:, 1], data[:, 2], data[:, 4 : 4 + n], data[:, 4 + n]]),
            transmission=data[:, 5 + n],
            rewards=data[:, 6 + n : 6 + 2 * n],
            cost=data[:, 6 + 2 * n],
            lyapunov=data[:, 7 + 2 * n],
        )


def _time_grid(t_start: float, t_end: float, dt: float) -> np.ndarray:
    span = t_end - t_start
    steps = max(int(np.ceil(span / dt - 1e-9)), 0)
    times = t_start + dt * np.arange(steps + 1)
    times[-1] = t_end if steps else t_start
    return times


def integrate(
    s0: ClosedLoopState,
    ep: EpidemicParams,
    md: MechanismDesign,
    model: ChoiceModel,
    t_end: float,
    dt: float = config.DEFAULT_DT,
    t_start: float = 0.0,
    stop_at_equilibrium: bool = False,
) -> Trajectory:
    """Fixed-step RK4 from ``t_start`` to ``t_end``.

    Stored states are re-projected: x is clipped and renormalized when its
    sum drifts by more than SIMPLEX_DRIFT_TOL and I is clamped at I_FLOOR.
    Both corrections are counted and logged. With ``stop_at_equilibrium``
    the run ends once the sup-norm of the vector field stays below
    EQUILIBRIUM_TOL for EQUILIBRIUM_STEPS consecutive steps.
    """
    if not dt > 0:
        raise ParameterError(f"dt must be positive, got {dt}")
    if t_end < t_start:
        raise ParameterError(f"t_end={t_end} precedes t_start={t_start}")
    if s0.I <= 0:
        raise DomainError("initial I must be positive")
    loop = ClosedLoop(ep, md, model)
    times = _time_grid(t_start, t_end, dt)
    states = np.empty((len(times), loop.n + 3))
    y = s0.as_array()
    states[0] = y

    warm = np.asarray(s0.x, dtype=float) if np.min(s0.x) > 0 else None
    renormalized = clamped = quiet = 0
    last = len(times) - 1
    settled = False
    for k in range(last):
        h = times[k + 1] - times[k]
        k1, warm = loop.derivative(y, warm)
        if stop_at_equilibrium:
            quiet = quiet + 1 if np.max(np.abs(k1)) < config.EQUILIBRIUM_TOL else 0
            if quiet >= config.EQUILIBRIUM_STEPS:
                last, settled = k, True
                break
        k2, _ = loop.derivative(y + 0.5 * h * k1, warm)
        k3, _ = loop.derivative(y + 0.5 * h * k2, warm)
        k4, _ = loop.derivative(y + h * k3, warm)
        y = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)

        if not np.all(np.isfinite(y)):
            raise NumericError("non-finite state", float(times[k + 1]))
        x = y[2:-1]
        if x.min() < 0 or abs(x.sum() - 1.0) > config.SIMPLEX_DRIFT_TOL:
            x = np.clip(x, 0.0, None)
            y[2:-1] = x / x.sum()
            renormalized += 1
        if y[0] < config.I_FLOOR:
            y[0] = config.I_FLOOR
            clamped += 1
        states[k + 1] = y

    if renormalized:
        logger.warning("re-projected x onto the simplex on %d steps", renormalized)
    if clamped:
        logger.warning("clamped I at %g on %d steps", config.I_FLOOR, clamped)
    if settled:
        logger.info("equilibrium reached at t=%g; stopping early", times[last])

    times, states = times[: last + 1], states[: last + 1]
    rewards = loop.reward(states[:, -1])
    return Trajectory(
        times=times,
        states=states,
        transmission=states[:, 2:-1] @ loop.beta,
        rewards=rewards,
        cost=np.sum(rewards * states[:, 2:-1], axis=1),
        lyapunov=loop.lyapunov(states),
        settled_early=settled,
    )
