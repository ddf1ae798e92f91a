from typing import Annotated, Any, Dict, List, Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

import config
from models.errors import DomainError


class EpidemicParams(BaseModel):
    """Rates of the normalized SIRS model plus the strategy data.

    Rates are per day. ``sigma``, ``omega``, ``eta`` and the cost
    differentials ``c_tilde`` are derived and never stored.
    """

    model_config = ConfigDict(frozen=True)

    gamma: float = Field(gt=0.0, description="Daily recovery rate")
    psi: float = Field(default=0.0, ge=0.0, description="Daily immunity-waning rate")
    theta: float = Field(default=0.0, ge=0.0, description="Daily birth rate")
    beta_vec: List[float] = Field(
        min_length=2, description="Transmission rate of each strategy, strictly increasing"
    )
    cost_vec: List[float] = Field(
        min_length=2, description="Intrinsic cost of each strategy, strictly decreasing"
    )

    @model_validator(mode="after")
    def _check_ordering(self) -> "EpidemicParams":
        beta = np.asarray(self.beta_vec)
        cost = np.asarray(self.cost_vec)
        if beta.shape != cost.shape:
            raise ValueError("beta_vec and cost_vec must have the same length")
        if np.any(np.diff(beta) <= 0):
            raise ValueError("beta_vec must be strictly increasing")
        if np.any(np.diff(cost) >= 0):
            raise ValueError("cost_vec must be strictly decreasing")
        if beta[0] <= self.gamma + self.theta:
            raise ValueError("beta_vec[0] must exceed sigma = gamma + theta")
        if self.psi + self.theta <= 0:
            raise ValueError("omega = psi + theta must be positive so that eta lies in (0, 1)")
        return self

    @property
    def n(self) -> int:
        return len(self.beta_vec)

    @property
    def sigma(self) -> float:
        return self.gamma + self.theta

    @property
    def omega(self) -> float:
        return self.psi + self.theta

    @property
    def eta(self) -> float:
        return self.omega / (self.omega + self.gamma)

    @property
    def beta(self) -> np.ndarray:
        return np.asarray(self.beta_vec, dtype=float)

    @property
    def c_tilde(self) -> np.ndarray:
        cost = np.asarray(self.cost_vec, dtype=float)
        return cost - cost[-1]


# --- Choice model specifications (discriminated on ``kind``) ---

NoiseFamily = Literal["gumbel", "normal", "laplace", "gev", "logistic", "cauchy"]


class LogitSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    kind: Literal["logit"] = "logit"
    mu: float = Field(default=1.0, gt=0.0, description="Noise intensity")


class LogBarrierSpec(BaseModel):
    """Perturbation mu * (-sum ln z_i)."""

    model_config = ConfigDict(frozen=True)

    kind: Literal["log_barrier"] = "log_barrier"
    mu: float = Field(default=1.0, gt=0.0)


class NoiseSpec(BaseModel):
    """I.i.d. additive payoff noise, evaluated by quadrature."""

    model_config = ConfigDict(frozen=True)

    kind: Literal["noise"] = "noise"
    dist: NoiseFamily = "normal"
    scale: float = Field(default=1.0, gt=0.0)
    shape: float = Field(default=0.0, description="GEV shape (scipy convention); 0 is Gumbel")


class MonteCarloSpec(NoiseSpec):
    """Same noise law as :class:`NoiseSpec` plus a Monte-Carlo cross-check budget."""

    kind: Literal["mc"] = "mc"
    samples: int = Field(default=1_000_000, ge=1)
    seed: int = 0


ChoiceSpec = Annotated[
    Union[LogitSpec, LogBarrierSpec, NoiseSpec, MonteCarloSpec], Field(discriminator="kind")
]


class MechanismDesign(BaseModel):
    """Parameters of the payoff mechanism G (q-dynamics) and H (reward map).

    ``beta_bar`` and ``r_bar`` may be left unset in a scenario file when the
    planner derives them (budget design or learning phase).
    """

    model_config = ConfigDict(frozen=True)

    beta_bar: Optional[float] = Field(default=None, description="Target endemic transmission rate")
    r_bar: Optional[List[float]] = Field(default=None, description="Stationary reward vector")
    upsilon: float = Field(default=3.0, gt=0.0)
    kappa: float = Field(default=1.0, ge=0.0, description="Gain on G; 0 freezes q")
    h_variant: Literal["plain", "nonnegative"] = "plain"

    @field_validator("r_bar")
    @classmethod
    def _nonnegative_reward(cls, value):
        if value is not None and min(value) < 0:
            raise ValueError("r_bar must be entrywise nonnegative")
        return value

    @property
    def resolved(self) -> bool:
        return self.beta_bar is not None and self.r_bar is not None

    def validate_for(self, ep: EpidemicParams) -> "MechanismDesign":
        """Raise DomainError unless the design is complete and fits ``ep``."""
        if not self.resolved:
            raise DomainError("mechanism design needs both beta_bar and r_bar")
        if len(self.r_bar) != ep.n:
            raise DomainError(f"r_bar has {len(self.r_bar)} entries, expected {ep.n}")
        if not ep.beta_vec[0] < self.beta_bar < ep.beta_vec[-1]:
            raise DomainError(
                f"beta_bar={self.beta_bar} outside ({ep.beta_vec[0]}, {ep.beta_vec[-1]})"
            )
        return self


class ClosedLoopState(BaseModel):
    """Full state (I, R, x, q) of the epidemic game and the PBR dynamics."""

    model_config = ConfigDict(frozen=True)

    I: float = Field(gt=0.0, le=1.0)
    R: float = Field(ge=0.0, le=1.0)
    x: List[float] = Field(min_length=2)
    q: float = 0.0

    @model_validator(mode="after")
    def _check_state(self) -> "ClosedLoopState":
        if self.I + self.R > 1.0 + 1e-12:
            raise ValueError("I + R must not exceed 1")
        x = np.asarray(self.x)
        if np.any(x < -1e-12) or abs(x.sum() - 1.0) > 1e-9:
            raise ValueError("x must lie on the simplex")
        return self

    @property
    def S(self) -> float:
        return 1.0 - self.I - self.R

    def as_array(self) -> np.ndarray:
        return np.concatenate([[self.I, self.R], np.asarray(self.x, dtype=float), [self.q]])

    @classmethod
    def from_array(cls, y: np.ndarray) -> "ClosedLoopState":
        y = np.asarray(y, dtype=float)
        return cls(I=float(y[0]), R=float(y[1]), x=[float(v) for v in y[2:-1]], q=float(y[-1]))


# --- Design ---


class DesignProblem(BaseModel):
    model_config = ConfigDict(frozen=True)

    epidemic: EpidemicParams
    choice: ChoiceSpec = Field(default_factory=LogitSpec)
    budget: float = Field(gt=0.0, description="Long-run per-capita reward budget c*")


class DesignSolution(BaseModel):
    r_star: List[float]
    beta_star: float
    x_star: List[float]
    cost: float = Field(description="Achieved stationary spend r*'x*")
    q_bar: Optional[float] = None
    method: Literal["active_constraint", "multistart"] = "active_constraint"
    starts: int = 1
    dispersion: float = Field(default=0.0, description="Spread of objective values across starts")


# --- Bounds ---


class AnytimeBound(BaseModel):
    alpha: float = Field(ge=0.0)
    i_bar: float
    factor: float
    bound: float


class BoundReport(BaseModel):
    alpha: float
    factor: float
    bound: float
    max_infected: float
    margin: float
    passed: bool


# --- Learning ---


class SurveyConfig(BaseModel):
    """Survey design: fixed reward vector, wave size, cadence and seed."""

    model_config = ConfigDict(frozen=True)

    r: Optional[List[float]] = Field(
        default=None,
        description="Survey reward vector; defaults to r - c_tilde = (2, 0, ..., 0)",
    )
    respondents: int = Field(default=1000, ge=1, description="Agents surveyed per wave (K)")
    confidence: float = Field(default=0.95, gt=0.0, lt=1.0)
    cadence_days: float = Field(default=30.0, gt=0.0)
    waves: int = Field(default=8, ge=1)
    seed: int = 0


class ExpectationInterval(BaseModel):
    mean: float
    epsilon: float
    lower: float
    upper: float
    samples: int
    confidence: float


class MuInterval(BaseModel):
    mu_lower: float = Field(gt=0.0)
    mu_upper: float = Field(gt=0.0)
    confidence: float
    samples: int
    clipped_lower: bool = False
    clipped_upper: bool = False

    @model_validator(mode="after")
    def _ordered(self) -> "MuInterval":
        if self.mu_lower > self.mu_upper:
            raise ValueError("mu_lower must not exceed mu_upper")
        return self


class SurveyWave(BaseModel):
    t: float
    expectation: ExpectationInterval
    mu: MuInterval
    mu_hat: float


class CostBound(BaseModel):
    value: float
    lam: float = Field(lt=0.0, description="Negative root of the Newton map")


# --- Scenario configuration ---


class RedesignEvent(BaseModel):
    """Swap mechanism parameters atomically at time ``t``."""

    kind: Literal["redesign"] = "redesign"
    t: float = Field(ge=0.0)
    beta_bar: Optional[float] = None
    r_bar: Optional[List[float]] = None
    upsilon: Optional[float] = Field(default=None, gt=0.0)
    kappa: Optional[float] = Field(default=None, ge=0.0)


class PriorEquilibrium(BaseModel):
    """Start the run at the endemic equilibrium reached under a prior reward."""

    r_bar: List[float]
    q: float = 0.0


class PlannerSpec(BaseModel):
    """Learning-phase planner: survey waves, t0 redesign and the update policy."""

    mu_upper_prior: float = Field(default=5.0, gt=0.0)
    budget: float = Field(gt=0.0)
    survey: SurveyConfig = Field(default_factory=SurveyConfig)
    mu_true: float = Field(default=1.0, gt=0.0, description="Noise level used to simulate answers")
    accuracy: float = Field(default=0.05, gt=0.0)
    policy: Literal["switch", "gated"] = "switch"
    alpha_gate: float = Field(default=4e-4, gt=0.0)
    gate_every: float = Field(default=30.0, gt=0.0)
    line_search_iters: int = Field(default=30, ge=1)


class ScenarioConfig(BaseModel):
    schema_version: Literal[1] = config.SCHEMA_VERSION
    name: str = "scenario"
    epidemic: EpidemicParams
    choice: ChoiceSpec = Field(default_factory=LogitSpec)
    mechanism: MechanismDesign = Field(default_factory=MechanismDesign)
    budget: Optional[float] = Field(
        default=None, gt=0.0, description="Derive (r_bar, beta_bar) from this budget when unset"
    )
    initial_state: Optional[ClosedLoopState] = None
    prior: Optional[PriorEquilibrium] = None
    horizon: float = Field(default=3000.0, ge=0.0)
    dt: float = Field(default=config.DEFAULT_DT, gt=0.0)
    events: List[RedesignEvent] = Field(default_factory=list)
    planner: Optional[PlannerSpec] = None
    output_dir: Optional[str] = None
    seed: int = 0
    stop_at_equilibrium: bool = False

    @model_validator(mode="after")
    def _check_consistency(self) -> "ScenarioConfig":
        times = [event.t for event in self.events]
        if times != sorted(times):
            raise ValueError("events must be sorted by time")
        if times and times[-1] > self.horizon:
            raise ValueError(f"event at t={times[-1]} lies beyond the horizon {self.horizon}")
        if (self.initial_state is None) == (self.prior is None):
            raise ValueError("exactly one of initial_state and prior must be given")
        if (
            not self.mechanism.resolved
            and self.budget is None
            and self.planner is None
        ):
            raise ValueError("mechanism needs beta_bar and r_bar, a budget, or a planner")
        n = self.epidemic.n
        if self.initial_state is not None and len(self.initial_state.x) != n:
            raise ValueError(f"initial x must have {n} entries")
        return self


# --- Requests (CLI files and REST bodies) ---


class DesignRequest(DesignProblem):
    schema_version: Literal[1] = config.SCHEMA_VERSION
    seed: int = Field(default=0, description="Seed for the multistart search")
    beta_bar: Optional[float] = Field(default=None, description="Also solve q_bar for this target")
    r_bar: Optional[List[float]] = None


class RedesignPair(BaseModel):
    r_prior: List[float]
    r_bar: List[float]
    q0: float = 0.0


class BoundRequest(BaseModel):
    schema_version: Literal[1] = config.SCHEMA_VERSION
    epidemic: EpidemicParams
    choice: ChoiceSpec = Field(default_factory=LogitSpec)
    beta_bar: float
    upsilon: float = Field(default=3.0, gt=0.0)
    alpha: Optional[float] = Field(default=None, ge=0.0)
    redesign: Optional[RedesignPair] = None

    @model_validator(mode="after")
    def _one_source(self) -> "BoundRequest":
        if (self.alpha is None) == (self.redesign is None):
            raise ValueError("give either alpha or a redesign pair")
        return self


class LearnRequest(BaseModel):
    schema_version: Literal[1] = config.SCHEMA_VERSION
    epidemic: EpidemicParams
    choice: Union[LogitSpec, LogBarrierSpec] = Field(default_factory=LogitSpec, discriminator="kind")
    mu_true: float = Field(default=1.0, gt=0.0)
    survey: SurveyConfig = Field(default_factory=SurveyConfig)
    accuracy: float = Field(default=0.05, gt=0.0)


# --- Run reports ---


class SegmentStats(BaseModel):
    start: float
    end: float
    peak_ratio: float
    mean_cost: float


class AppliedEvent(BaseModel):
    """Design put in force at ``t`` and the Lyapunov level it starts from."""

    t: float
    kind: str
    r_bar: List[float]
    beta_bar: float
    upsilon: float
    kappa: float
    alpha: Optional[float] = None

    def mechanism(self, h_variant: str = "plain") -> MechanismDesign:
        return MechanismDesign(
            beta_bar=self.beta_bar, r_bar=self.r_bar, upsilon=self.upsilon, kappa=self.kappa, h_variant=h_variant
        )


class RunSummary(BaseModel):
    terminal: Dict[str, Any]
    i_star: float
    peak_ratio: float
    terminal_cost: float
    settling_time: Optional[float] = None
    settled_early: bool = False
    segments: List[SegmentStats] = Field(default_factory=list)
    bound_checks: List[BoundReport] = Field(default_factory=list)
    design: Optional[DesignSolution] = None
    mu_history: List[SurveyWave] = Field(default_factory=list)
    t0: Optional[float] = None
    events: List[AppliedEvent] = Field(default_factory=list)
    mc_discrepancy: Optional[float] = None


class RunReport(BaseModel):
    """Public result of a scenario run.

    ``summary`` is None only on the error path; ``error`` then carries the
    message and ``error_kind`` the category used for exit codes.
    """

    name: str
    trajectory_path: Optional[str] = None
    summary: Optional[RunSummary] = None
    config: Dict[str, Any]
    tool_version: str = config.TOOL_VERSION
    error: Optional[str] = None
    error_kind: Optional[str] = None


class SweepResult(BaseModel):
    """One run per swept value plus the pairwise sup-distance of their I/I* curves."""

    parameter: str
    values: List[Any]
    reports: List[RunReport]
    combined_path: Optional[str] = None
    distances: List[List[float]] = Field(default_factory=list)


class LearnReport(BaseModel):
    waves: List[SurveyWave]
    t0: Optional[float] = None
    mu_hat: float
    mu: MuInterval


class GraphState(BaseModel):
    """Mutable state propagated through the scenario workflow.

    Nodes enrich it in turn; the formatter projects it to a RunReport.
    ``mechanism`` holds the design in force at the end of the run.
    """

    model_config = ConfigDict(arbitrary_types_allowed=True)

    scenario: ScenarioConfig
    model: Optional[Any] = None
    mechanism: Optional[MechanismDesign] = None
    initial: Optional[ClosedLoopState] = None
    design: Optional[DesignSolution] = None
    trajectory: Optional[Any] = None
    trajectory_path: Optional[str] = None
    events: List[AppliedEvent] = Field(default_factory=list)
    waves: List[SurveyWave] = Field(default_factory=list)
    t0: Optional[float] = None
    summary: Optional[RunSummary] = None
    report: Optional[RunReport] = None
    error: Optional[str] = None
    error_kind: Optional[str] = None
