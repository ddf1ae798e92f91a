import json
from pathlib import Path

import pytest

from core.choice import PerturbationModel
from models.schemas import ClosedLoopState, EpidemicParams, MechanismDesign, ScenarioConfig

SCENARIOS = Path(__file__).resolve().parent.parent / "scenarios"



@pytest.fixture
def ep() -> EpidemicParams:
    return EpidemicParams(gamma=0.1, psi=0.005, theta=0.0, beta_vec=[0.15, 0.19], cost_vec=[0.2, 0.0])


@pytest.fixture
def ep3() -> EpidemicParams:
    return EpidemicParams(gamma=0.1, psi=0.005, theta=0.0, beta_vec=[0.15, 0.17, 0.19], cost_vec=[0.3, 0.1, 0.0])


@pytest.fixture
def logit() -> PerturbationModel:
    return PerturbationModel.logit(1.0, 2)


@pytest.fixture
def budget_state() -> ClosedLoopState:
    return ClosedLoopState(I=0.0158, R=0.3170, x=[1.0, 0.0], q=0.0)


@pytest.fixture
def budget_design(ep, logit) -> MechanismDesign:
    """Exact active-constraint optimum at budget 0.15 with unit-noise logit."""
    from core.design import optimize_reward
    from models.schemas import DesignProblem

    solution = optimize_reward(DesignProblem(epidemic=ep, budget=0.15), model=logit)
    return MechanismDesign(beta_bar=solution.beta_star, r_bar=solution.r_star, upsilon=3.0, kappa=1.0)


@pytest.fixture
def load_scenario():
    """Bundled scenario file with top-level fields overridden."""

    def load(name: str, **overrides) -> ScenarioConfig:
        data = json.loads((SCENARIOS / name).read_text())
        data.update(overrides)
        return ScenarioConfig.model_validate(data)

    return load
