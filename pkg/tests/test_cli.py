import json
from pathlib import Path

import pytest

import graph.handlers as handlers
from cli import EXIT_CONFIG, EXIT_NUMERIC, EXIT_OK, main
from core.design import optimize_reward

SCENARIOS = Path(__file__).resolve().parent.parent / "scenarios"


def _write(tmp_path, name, data):
    path = tmp_path / name
    path.write_text(json.dumps(data))
    return str(path)


def test_design_command(capsys):
    assert main(["design", "--config", str(SCENARIOS / "design_budget.json")]) == EXIT_OK
    result = json.loads(capsys.readouterr().out)
    assert result["r_star"][0] == pytest.approx(0.287, abs=0.002)
    assert result["q_bar"] == pytest.approx(0.0, abs=1e-6)


def test_bound_command(capsys, tmp_path):
    code = main(["bound", "--config", str(SCENARIOS / "bound_redesign.json"), "--out-dir", str(tmp_path)])
    assert code == EXIT_OK
    result = json.loads(capsys.readouterr().out)
    assert result["alpha"] > 0
    assert result["factor"] >= 1.0
    assert json.loads((tmp_path / "bound.json").read_text()) == result


def test_learn_command_with_seed_override(capsys):
    assert main(["learn", "--config", str(SCENARIOS / "learn_survey.json"), "--seed", "5"]) == EXIT_OK
    result = json.loads(capsys.readouterr().out)
    assert result["t0"] == pytest.approx(240.0)
    assert len(result["waves"]) == 8


def test_simulate_command_writes_outputs(capsys, tmp_path):
    code = main(
        [
            "simulate",
            "--config",
            str(SCENARIOS / "budget_run.json"),
            "--horizon",
            "5",
            "--dt",
            "0.1",
            "--out-dir",
            str(tmp_path),
        ]
    )
    assert code == EXIT_OK
    report = json.loads(capsys.readouterr().out)
    assert report["config"]["horizon"] == 5.0
    assert report["config"]["dt"] == 0.1
    assert (tmp_path / "budget_run.csv").exists()
    assert (tmp_path / "budget_run.json").exists()


def test_sweep_command(capsys, tmp_path):
    code = main(
        [
            "sweep",
            "--config",
            str(SCENARIOS / "budget_run.json"),
            "--parameter",
            "noise_dist",
            "--values",
            "logit",
            "normal",
            "--horizon",
            "2",
            "--out-dir",
            str(tmp_path),
        ]
    )
    assert code == EXIT_OK
    result = json.loads(capsys.readouterr().out)
    assert result["values"] == ["logit", "normal"]
    assert Path(result["combined_path"]).exists()


def test_design_seed_reaches_the_multistart(capsys, monkeypatch):
    seen = []

    def recording(*args, **kwargs):
        seen.append(kwargs["seed"])
        return optimize_reward(*args, **kwargs)

    monkeypatch.setattr(handlers, "optimize_reward", recording)
    assert main(["design", "--config", str(SCENARIOS / "design_budget.json"), "--seed", "11"]) == EXIT_OK
    assert seen == [11]
    assert main(["design", "--config", str(SCENARIOS / "design_budget.json")]) == EXIT_OK
    assert seen == [11, 0]


def test_bound_takes_no_seed():
    with pytest.raises(SystemExit):
        main(["bound", "--config", str(SCENARIOS / "bound_redesign.json"), "--seed", "1"])


def test_missing_config_file(tmp_path):
    assert main(["design", "--config", str(tmp_path / "absent.json")]) == EXIT_CONFIG


def test_malformed_config_file(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text("{not json")
    assert main(["design", "--config", str(path)]) == EXIT_CONFIG


def test_invalid_request(tmp_path):
    data = json.loads((SCENARIOS / "design_budget.json").read_text())
    data["budget"] = -1.0
    assert main(["design", "--config", _write(tmp_path, "design.json", data)]) == EXIT_CONFIG


def test_numeric_failure_exit_code(tmp_path, capsys):
    data = json.loads((SCENARIOS / "budget_run.json").read_text())
    data["mechanism"] = {"beta_bar": 0.2, "r_bar": [0.3, 0.0]}
    data["horizon"] = 5
    assert main(["simulate", "--config", _write(tmp_path, "bad.json", data)]) == EXIT_NUMERIC
    assert json.loads(capsys.readouterr().out)["error_kind"] == "numeric"


def test_unknown_sweep_parameter_is_rejected():
    with pytest.raises(SystemExit):
        main(["sweep", "--config", str(SCENARIOS / "budget_run.json"), "--parameter", "gamma", "--values", "1"])
