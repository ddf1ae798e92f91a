"""Command-line entry point.

Subcommands read a JSON request (``--config``) and print a JSON result:

    simulate   run a scenario through the workflow graph
    design     optimal reward and endemic transmission rate for a budget
    bound      anytime bound on the infectious fraction
    learn      survey waves and the decision-noise estimate
    sweep      one scenario per value of kappa, upsilon, noise_dist or mu

Exit codes: 0 on success, 2 on configuration errors, 3 on numerical failures.
"""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional

from pydantic import BaseModel, ValidationError

import config
from graph import ScenarioGraph, sweep
from graph.handlers import handle_bound, handle_design, handle_learn
from models.errors import ConfigError, EPGError
from models.schemas import BoundRequest, DesignRequest, LearnRequest, ScenarioConfig

logger = logging.getLogger("epg")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


def setup_logging(level: str) -> None:
    logging.basicConfig(
        level=getattr(logging, level.upper(), logging.INFO),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )


def load_config(path: str) -> Dict[str, Any]:
    try:
        with open(path) as handle:
            return json.load(handle)
    except FileNotFoundError as e:
        raise ConfigError(f"configuration file not found at {path}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"error parsing configuration file {path}: {e}") from e


def parse(model: type, data: Dict[str, Any]) -> BaseModel:
    try:
        return model.model_validate(data)
    except ValidationError as e:
        raise ConfigError(str(e)) from e


def scenario_from_args(args: argparse.Namespace) -> ScenarioConfig:
    """Scenario file with the command-line overrides applied before validation."""
    data = load_config(args.config)
    for key in ("seed", "dt", "horizon"):
        value = getattr(args, key)
        if value is not None:
            data[key] = value
    if args.out_dir is not None:
        data["output_dir"] = args.out_dir
    return parse(ScenarioConfig, data)


def emit(result: BaseModel, out_dir: Optional[str], name: str) -> None:
    text = result.model_dump_json(indent=2)
    print(text)
    if out_dir:
        path = Path(out_dir) / f"{name}.json"
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
        logger.info("wrote %s", path)


def run_simulate(args: argparse.Namespace) -> int:
    cfg = scenario_from_args(args)
    report = ScenarioGraph().run_scenario(cfg)
    emit(report, cfg.output_dir, cfg.name)
    if report.error:
        logger.error(report.error)
        return EXIT_CONFIG if report.error_kind == "config" else EXIT_NUMERIC
    return EXIT_OK


def run_design(args: argparse.Namespace) -> int:
    data = load_config(args.config)
    if args.seed is not None:
        data["seed"] = args.seed
    emit(handle_design(parse(DesignRequest, data)), args.out_dir, "design")
    return EXIT_OK


def run_bound(args: argparse.Namespace) -> int:
    emit(handle_bound(parse(BoundRequest, load_config(args.config))), args.out_dir, "bound")
    return EXIT_OK


def run_learn(args: argparse.Namespace) -> int:
    data = load_config(args.config)
    if args.seed is not None:
        data.setdefault("survey", {})["seed"] = args.seed
    emit(handle_learn(parse(LearnRequest, data)), args.out_dir, "learn")
    return EXIT_OK


def _sweep_value(parameter: str, raw: str) -> Any:
    return raw if parameter == "noise_dist" else float(raw)


def run_sweep(args: argparse.Namespace) -> int:
    cfg = scenario_from_args(args)
    values = [_sweep_value(args.parameter, v) for v in args.values]
    result = sweep(cfg, args.parameter, values, out_dir=cfg.output_dir)
    emit(result, cfg.output_dir, f"{cfg.name}_{args.parameter}_sweep")
    failed = [r for r in result.reports if r.error]
    if failed:
        return EXIT_CONFIG if all(r.error_kind == "config" for r in failed) else EXIT_NUMERIC
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="epg", description="Epidemic population game simulator and design toolkit")
    parser.add_argument("--log-level", default=config.LOG_LEVEL, help="DEBUG, INFO, WARNING or ERROR")
    commands = parser.add_subparsers(dest="command", required=True)

    def common(sub: argparse.ArgumentParser, scenario: bool = False, seeded: bool = True) -> None:
        sub.add_argument("--config", required=True, help="JSON request or scenario file")
        sub.add_argument("--out-dir", default=None, help="Directory for CSV/JSON outputs")
        if seeded:
            sub.add_argument("--seed", type=int, default=None, help="Overrides the file's seed")
        if scenario:
            sub.add_argument("--dt", type=float, default=None, help="RK4 step in days")
            sub.add_argument("--horizon", type=float, default=None, help="Simulated days")

    common(commands.add_parser("simulate", help="Run a scenario"), scenario=True)
    common(commands.add_parser("design", help="Budget-optimal reward"))
    common(commands.add_parser("bound", help="Anytime bound on I(t)"), seeded=False)
    common(commands.add_parser("learn", help="Estimate mu from simulated surveys"))
    sweep_parser = commands.add_parser("sweep", help="Run a scenario per parameter value")
    common(sweep_parser, scenario=True)
    sweep_parser.add_argument("--parameter", required=True, choices=["kappa", "upsilon", "noise_dist", "mu"])
    sweep_parser.add_argument("--values", required=True, nargs="+")
    return parser


HANDLERS = {
    "simulate": run_simulate,
    "design": run_design,
    "bound": run_bound,
    "learn": run_learn,
    "sweep": run_sweep,
}


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging(args.log_level)
    try:
        return HANDLERS[args.command](args)
    except ConfigError as e:
        logger.error("configuration error: %s", e)
        return EXIT_CONFIG
    except EPGError as e:
        logger.error("numerical failure: %s", e)
        return EXIT_NUMERIC
    except ValueError as e:
        logger.error("invalid value: %s", e)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
