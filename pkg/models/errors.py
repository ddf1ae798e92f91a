"""Exception hierarchy shared by the numerical core, the pipeline and the surfaces."""

from typing import Optional

import numpy as np


class EPGError(Exception):
    """Base class for every error raised by this package."""

    kind = "numeric"


class ParameterError(EPGError, ValueError):
    """An argument is outside its admissible range (e.g. mu <= 0)."""


class DomainError(EPGError, ValueError):
    """A state or parameter leaves the domain where a formula is defined."""


class SolverError(EPGError):
    """An iterative solver failed to converge within its iteration cap."""

    def __init__(self, message: str, last_iterate=None, residual: Optional[float] = None):
        super().__init__(message)
        self.last_iterate = None if last_iterate is None else np.asarray(last_iterate)
        self.residual = residual


class InfeasibilityError(EPGError):
    """No bracket / feasible point exists within the search limits."""


class ContractError(EPGError):
    """A documented precondition of an operation was violated."""


class InversionError(EPGError):
    """A confidence interval cannot be mapped back to a parameter interval."""


class NumericError(EPGError):
    """NaN or Inf appeared while integrating."""

    def __init__(self, message: str, time: float):
        super().__init__(f"{message} at t={time:g}")
        self.time = time


class ConfigError(EPGError):
    """A scenario or request file is malformed or inconsistent."""

    kind = "config"
