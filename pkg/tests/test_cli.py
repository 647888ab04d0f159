from __future__ import annotations

import json

import numpy as np
import pytest

from dynbif import cli
from dynbif.branch import BranchControls, OutcomeReport, build_global_branch
from dynbif.cli import (
    EXIT_HYPOTHESIS,
    EXIT_INCONSISTENT,
    EXIT_OK,
    EXIT_UNDETERMINED,
    EXIT_USAGE,
    RunConfig,
    RunReport,
    main,
    run,
)
from dynbif.conley import index_profile
from dynbif.diagram import render_diagram
from dynbif.errors import InvalidArgument


def _cfg(tmp_path, **kw):
    base = {"domain": {"kind": "interval"}, "family": {"name": "power_law", "alpha": -1.0, "p": 3.0},
            "out": str(tmp_path), "seed": 0}
    base.update(kw)
    return RunConfig.from_dict(base)


def test_config_round_trip(tmp_path):
    cfg = _cfg(tmp_path, window=[0.5, 4.5], modes=8)
    again = RunConfig.loads(cfg.dumps())
    assert again == cfg
    path = tmp_path / "c.json"
    path.write_text(cfg.dumps())
    assert RunConfig.load(path) == cfg


def test_config_rejects_unknown_keys(tmp_path):
    with pytest.raises(InvalidArgument):
        RunConfig.from_dict({"out": str(tmp_path), "colour": "red"})


def test_spectrum_table(tmp_path, capsys):
    assert main(["spectrum", "--out", str(tmp_path), "--modes", "5"]) == EXIT_OK
    out = capsys.readouterr().out
    for k in range(1, 6):
        assert f"{k:3d}" in out
    rep = json.loads((tmp_path / "report.json").read_text())
    assert rep["results"]["eigenvalues"] == pytest.approx([1, 4, 9, 16, 25], abs=1e-12)
    assert (tmp_path / "spectrum.csv").exists()


def test_check_exit_codes(tmp_path):
    assert run("check", _cfg(tmp_path, window=[0.5, 10.5])).exit_code == EXIT_OK
    bad = _cfg(tmp_path, family={"name": "custom", "ref": "exp_counterexample"})
    rep = run("check", bad)
    assert rep.exit_code == EXIT_HYPOTHESIS
    assert not rep.hypotheses["f1"]["passed"]
    assert any(w["operation"] == "check_f1" for w in rep.warnings)


def test_usage_errors_exit_one(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"out": str(tmp_path), "window": [0.5, 4.5]}))
    assert main(["branch", "--config", str(cfg)]) == EXIT_USAGE
    assert "seed" in capsys.readouterr().err
    cfg.write_text("{not json")
    assert main(["spectrum", "--config", str(cfg)]) == EXIT_USAGE
    cfg.write_text(json.dumps({"bogus": 1}))
    assert main(["spectrum", "--config", str(cfg)]) == EXIT_USAGE


def test_branch_exit_ok_and_artifacts(tmp_path):
    rep = run("branch", _cfg(tmp_path, window=[0.5, 4.5], modes=8))
    assert rep.exit_code == EXIT_OK
    assert rep.outcome["classification"] == "UnboundedInLambda"
    for name in ("graph.json", "diagram.svg", "report.json", "branch_b0.csv"):
        assert (tmp_path / name).exists()


def test_branch_undetermined_exit(tmp_path):
    rep = run("branch", _cfg(tmp_path, window=[0.5, 4.5], modes=8, max_steps=3))
    assert rep.outcome["classification"] == "UndeterminedBudget"
    assert rep.exit_code == EXIT_UNDETERMINED


def test_branch_inconsistent_exit(tmp_path, monkeypatch):
    def fake_classify(g, profile=None, upsilon=None, budgets=None, hypotheses=None):
        return OutcomeReport("MeetsTrivialAt", mu0=4.0, inconsistent=True, flags=["consistency: forced"])

    monkeypatch.setattr(cli, "classify", fake_classify)
    rep = run("branch", _cfg(tmp_path, window=[0.5, 4.5], modes=8))
    assert rep.exit_code == EXIT_INCONSISTENT
    assert any(w["operation"] == "classify" for w in rep.warnings)


def test_report_round_trip(tmp_path):
    rep = run("profile", _cfg(tmp_path, window=[0.5, 10.5]))
    data = json.loads(rep.dumps(with_timing=False))
    back = RunReport.from_dict({**data, "timing": {}})
    assert back.dumps(with_timing=False) == rep.dumps(with_timing=False)
    assert [g[2] for g in rep.profile["gaps"]] == ["S^0", "S^1", "S^2", "S^3"]


def test_simulate_needs_seed_without_initial(tmp_path):
    with pytest.raises(InvalidArgument):
        run("simulate", _cfg(tmp_path, seed=None, lam=2.0))
    init = [0.1] + [0.0] * 15
    rep = run("simulate", _cfg(tmp_path, seed=None, lam=2.0, initial=init, horizon=50.0))
    assert rep.results["status"] == "converged-to-equilibrium"
    assert abs(rep.results["final"][0]) > 0.5
    assert (tmp_path / "trajectory.csv").exists()


def test_branch_byte_determinism(tmp_path):
    outs = []
    for k in range(2):
        d = tmp_path / f"run{k}"
        run("branch", _cfg(d, window=[0.5, 4.5], modes=8, seed=7))
        outs.append(d)
    for name in ("graph.json", "diagram.svg"):
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()
    r0 = json.loads((outs[0] / "report.json").read_text())
    r1 = json.loads((outs[1] / "report.json").read_text())
    r0.pop("timing"), r1.pop("timing")
    r0["config"].pop("out"), r1["config"].pop("out")
    assert r0 == r1


def test_diagram_rerender_identical(line16, cubic):
    g = build_global_branch(line16, cubic, 1.0, BranchControls(window=(0.5, 4.5), heteroclinics=False))
    prof = index_profile(line16, cubic, g.window)
    assert render_diagram(g, prof) == render_diagram(g, prof)


def test_diagram_of_empty_graph(line16, cubic):
    g = build_global_branch(line16, cubic, 1.0, BranchControls(window=(0.5, 4.5), heteroclinics=False))
    g.branches = []
    svg = render_diagram(g).decode()
    assert svg.startswith("<?xml") and "<svg" in svg
