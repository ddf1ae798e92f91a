from .errors import (
    ConfigError,
    ContractError,
    DomainError,
    EPGError,
    InfeasibilityError,
    InversionError,
    NumericError,
    ParameterError,
    SolverError,
)
from .schemas import (
    ClosedLoopState,
    DesignProblem,
    DesignSolution,
    EpidemicParams,
    GraphState,
    MechanismDesign,
    RunReport,
    ScenarioConfig,
)

__all__ = [
    "ConfigError",
    "ContractError",
    "DomainError",
    "EPGError",
    "InfeasibilityError",
    "InversionError",
    "NumericError",
    "ParameterError",
    "SolverError",
    "ClosedLoopState",
    "DesignProblem",
    "DesignSolution",
    "EpidemicParams",
    "GraphState",
    "MechanismDesign",
    "RunReport",
    "ScenarioConfig",
]
