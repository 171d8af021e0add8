"""Exit codes and output conventions of the command-line entry point."""

import dataclasses
import json

import pytest

from scalebridge import harness
from scalebridge.cli import main
from scalebridge.errors import ConvergenceError


def test_list_prints_catalog(capsys):
    assert main(["list"]) == 0
    out = capsys.readouterr().out
    for kind in ("green-kubo", "lattice-sde", "hydro", "heat-ref"):
        assert kind in out
    assert main(["list", "--json"]) == 0
    parsed = json.loads(capsys.readouterr().out)
    assert len(parsed) == 14


def test_run_from_config_succeeds(tmp_path, capsys):
    cfg = tmp_path / "gk.ini"
    cfg.write_text("[experiment]\nkind = green-kubo\n"
                   "[params]\nn_cells = 256\nm_max = 6\n")
    out = tmp_path / "out"
    code = main(["green-kubo", "--config", str(cfg), "--out", str(out)])
    assert code == 0
    assert (out / "manifest.json").exists()
    stdout = capsys.readouterr().out
    assert "manifest.json" in stdout
    assert "value" in stdout


def test_validation_error_exits_2_with_json(tmp_path, capsys):
    cfg = tmp_path / "bad.ini"
    cfg.write_text("[experiment]\nkind = green-kubo\n"
                   "[params]\nn_cells = 7\n")
    out = tmp_path / "never"
    code = main(["green-kubo", "--config", str(cfg), "--out", str(out),
                 "--json-errors"])
    assert code == 2
    err = json.loads(capsys.readouterr().err)
    assert err["error"] == "ValidationError"
    assert err["exit_code"] == 2
    assert err["message"]
    assert not out.exists()


def test_budget_error_exits_3(tmp_path, capsys):
    cfg = tmp_path / "budget.json"
    cfg.write_text(json.dumps({
        "kind": "simulate-map",
        "params": {"epsilon": 1e-9, "horizon": 200.0}}))
    code = main(["simulate-map", "--config", str(cfg),
                 "--out", str(tmp_path / "x"), "--json-errors"])
    assert code == 3
    assert json.loads(capsys.readouterr().err)["error"] \
        == "BudgetExceededError"


def test_numerical_error_exits_4(tmp_path, capsys, monkeypatch):
    def boom(params, seed, pool):
        raise ConvergenceError("tail refused to settle")

    spec = harness.EXPERIMENTS["heat-ref"]
    monkeypatch.setitem(harness.EXPERIMENTS, "heat-ref",
                        dataclasses.replace(spec, runner=boom))
    code = main(["heat-ref", "--out", str(tmp_path / "x"), "--json-errors"])
    assert code == 4
    err = json.loads(capsys.readouterr().err)
    assert err["error"] == "ConvergenceError"
    assert err["exit_code"] == 4


def test_unknown_subcommand_is_usage_error(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 2
    assert "invalid choice" in capsys.readouterr().err
