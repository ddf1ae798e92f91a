from fastapi import FastAPI, HTTPException
from fastapi.middleware.cors import CORSMiddleware

import config
from graph import ScenarioGraph
from graph.handlers import handle_bound, handle_design, handle_learn
from models.errors import ConfigError, EPGError
from models.schemas import (
    AnytimeBound,
    BoundRequest,
    DesignRequest,
    DesignSolution,
    LearnReport,
    LearnRequest,
    RunReport,
    ScenarioConfig,
)

# Create the FastAPI application with some descriptive metadata used by OpenAPI docs
app = FastAPI(
    title="Epidemic Population Game API",
    description="Design, bound, learn and simulate endpoints for the epidemic population game toolkit",
    version=config.TOOL_VERSION,
)

app.add_middleware(
    CORSMiddleware,
    allow_origins=["*"],
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)

# Compiled once per process; runs are independent so the graph is shared.
simulator = ScenarioGraph()


def _raise_for(error: EPGError):
    """Config problems are the client's (422); numerical failures are 400."""
    status = 422 if isinstance(error, ConfigError) else 400
    raise HTTPException(status_code=status, detail=f"{type(error).__name__}: {error}")


@app.get("/")
async def root():
    """Root endpoint listing the available endpoints and request shapes."""
    return {
        "message": "Epidemic Population Game API",
        "version": config.TOOL_VERSION,
        "schema_version": config.SCHEMA_VERSION,
        "endpoints": {
            "POST /design": "Budget-optimal reward r*, beta* and q_bar - send a DesignRequest",
            "POST /bound": "Anytime bound on I(t) - send a BoundRequest with alpha or a redesign pair",
            "POST /learn": "Survey waves and the mu estimate - send a LearnRequest",
            "POST /simulate": "Run a scenario and return its summary - send a ScenarioConfig",
        },
    }


@app.post("/design", response_model=DesignSolution)
def design(request: DesignRequest):
    try:
        return handle_design(request)
    except EPGError as e:
        _raise_for(e)


@app.post("/bound", response_model=AnytimeBound)
def bound(request: BoundRequest):
    try:
        return handle_bound(request)
    except EPGError as e:
        _raise_for(e)


@app.post("/learn", response_model=LearnReport)
def learn(request: LearnRequest):
    try:
        return handle_learn(request)
    except EPGError as e:
        _raise_for(e)


@app.post("/simulate", response_model=RunReport)
def simulate(request: ScenarioConfig):
    """Run a scenario; the trajectory stays server-side (no output directory)."""
    report = simulator.run_scenario(request.model_copy(update={"output_dir": None}))
    if report.error:
        raise HTTPException(status_code=422 if report.error_kind == "config" else 400, detail=report.error)
    return report


@app.get("/health")
async def health_check():
    return {"status": "healthy", "version": config.TOOL_VERSION}


if __name__ == "__main__":
    # Start the app with Uvicorn when running this file directly.
    import uvicorn

    uvicorn.run(app, host="0.0.0.0", port=8000)
