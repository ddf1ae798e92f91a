"""Configuration module.

Loads environment variables and exposes the numeric defaults used across
the simulator, the design solvers and the scenario pipeline. Every
tolerance or iteration cap lives here so logic modules never carry their
own magic numbers.
"""

import os
from dotenv import load_dotenv

# Load variables from a local .env file if present (safe for dev/local usage).
load_dotenv()


def _float(name: str, default: float) -> float:
    return float(os.getenv(name, default))


def _int(name: str, default: int) -> int:
    return int(os.getenv(name, default))


# --- Versioning ---
TOOL_VERSION = "1.0.0"
# Scenario/design/bound/learn files must declare this schema version.
SCHEMA_VERSION = 1

# --- Integrator ---
# Fixed RK4 step in days.
DEFAULT_DT = _float("EPG_DT", 0.05)
# Early stop when the sup-norm of the vector field stays below this value...
EQUILIBRIUM_TOL = _float("EPG_EQUILIBRIUM_TOL", 1e-9)
# ...for this many consecutive steps.
EQUILIBRIUM_STEPS = _int("EPG_EQUILIBRIUM_STEPS", 100)
SIMPLEX_DRIFT_TOL = 1e-12
I_FLOOR = 1e-30

# --- Choice functions ---
CHOICE_TOL = _float("EPG_CHOICE_TOL", 1e-10)
CHOICE_MAX_ITER = _int("EPG_CHOICE_MAX_ITER", 200)
MIRROR_MAX_ITER = _int("EPG_MIRROR_MAX_ITER", 20000)
# Relative finite-difference step for choice sensitivities.
FD_STEP = _float("EPG_FD_STEP", 1e-5)
# Gauss-Legendre nodes for the noise-model choice quadrature.
QUADRATURE_NODES = _int("EPG_QUADRATURE_NODES", 256)
# Monte-Carlo draws are processed in chunks of this many rows.
MC_CHUNK = _int("EPG_MC_CHUNK", 200_000)

# --- Design ---
DESIGN_TOL = _float("EPG_DESIGN_TOL", 1e-8)
FEASIBILITY_TOL = _float("EPG_FEASIBILITY_TOL", 1e-8)
QBAR_LIMIT = 1e6
DESIGN_STARTS = _int("EPG_DESIGN_STARTS", 8)

# --- Bounds ---
BOUND_TOL = _float("EPG_BOUND_TOL", 1e-8)
BOUND_GRID = _int("EPG_BOUND_GRID", 401)
# Lower edge of the transmission-rate range scanned by the supremum: sigma + this.
BOUND_SIGMA_MARGIN = 1e-6
CONTRACT_TOL = 1e-6

# --- Learning ---
MU_MIN = _float("EPG_MU_MIN", 1e-3)
MU_MAX = _float("EPG_MU_MAX", 1e3)
MU_REL_TOL = 1e-6

# --- Runtime ---
LOG_LEVEL = os.getenv("EPG_LOG_LEVEL", "INFO")
MAX_WORKERS = _int("EPG_MAX_WORKERS", 4)
