"""Command-line runner: spectrum, checks, bifurcation values, profiles, branches, trajectories."""
from __future__ import annotations

import argparse
import csv
import json
import math
import sys
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any

import numpy as np

from dynbif import __version__
from dynbif.branch import BranchControls, build_global_branch, classify
from dynbif.conley import check_hypotheses, index_profile
from dynbif.diagram import render_diagram
from dynbif.errors import ContinuationViolation, DynBifError, InvalidArgument, Unsupported
from dynbif.flow import integrate
from dynbif.nonlinearity import (
    beta_monotone,
    bifurcation_values_in,
    check_f1,
    check_f2,
    family_from_dict,
    suggest_mu,
)
from dynbif.spectral import build_domain, distinct_eigenvalues, parse_domain_spec

COMMANDS = ("spectrum", "check", "bifvalues", "profile", "branch", "sweep", "simulate")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_HYPOTHESIS = 2
EXIT_UNDETERMINED = 3
EXIT_INCONSISTENT = 4

_RANDOM_COMMANDS = {"branch", "sweep"}


def _f(x: float) -> str:
    return format(float(x), ".17g")


# --------------------------------------------------------------------------- config


@dataclass
class RunConfig:
    domain: dict = field(default_factory=lambda: {"kind": "interval", "length": math.pi})
    modes: int = 16
    p_max: int = 5
    family: dict = field(default_factory=lambda: {"name": "power_law", "alpha": -1.0, "p": 3.0,
                                                  "beta": 0.0, "q": 2.0})
    window: list = field(default_factory=lambda: [0.5, 10.5])
    norm_budget: float = 1e3
    max_nodes: int = 20000
    max_depth: int = 2
    horizon: float = 1e4
    seed: int | None = None
    out: str = "out"
    gamma: float | None = None
    step_fraction: float = 0.05
    ds: float = 0.05
    max_steps: int = 2000
    heteroclinics: bool = True
    f2_mu: float | None = None
    f2_eps: float = 1.0
    lam: float | None = None
    initial: list | None = None
    tol: float = 1e-9

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        dom = parse_domain_spec(self.domain)
        self.domain = dom.to_dict()
        self.family = family_from_dict(self.family).to_dict()
        if not isinstance(self.modes, int) or isinstance(self.modes, bool) or self.modes < 1:
            raise InvalidArgument("modes must be a positive integer")
        if not isinstance(self.p_max, int) or self.p_max < 1:
            raise InvalidArgument("p_max must be a positive integer")
        if len(self.window) != 2 or not float(self.window[0]) < float(self.window[1]):
            raise InvalidArgument("window must be [a, b] with a < b")
        self.window = [float(self.window[0]), float(self.window[1])]
        for name in ("norm_budget", "horizon", "step_fraction", "ds", "tol", "f2_eps"):
            v = float(getattr(self, name))
            if not (v > 0 and math.isfinite(v)):
                raise InvalidArgument(f"{name} must be a positive finite number")
            setattr(self, name, v)
        if self.seed is not None:
            if isinstance(self.seed, bool) or not isinstance(self.seed, int) or not 0 <= self.seed < 2 ** 64:
                raise InvalidArgument("seed must be an unsigned 64-bit integer")
        if self.initial is not None:
            if len(self.initial) != self.modes:
                raise InvalidArgument(f"initial state needs {self.modes} coefficients")
            self.initial = [float(x) for x in self.initial]
        for name in ("gamma", "lam", "f2_mu"):
            v = getattr(self, name)
            if v is not None:
                setattr(self, name, float(v))

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        extra = set(data) - known
        if extra:
            raise InvalidArgument(f"unknown config keys: {sorted(extra)}")
        return cls(**data)

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def load(cls, path) -> "RunConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    @classmethod
    def loads(cls, text: str) -> "RunConfig":
        return cls.from_dict(json.loads(text))


# --------------------------------------------------------------------------- report


@dataclass
class RunReport:
    command: str
    config: dict
    version: str = __version__
    hypotheses: dict = field(default_factory=dict)
    upsilon: list = field(default_factory=list)
    profile: dict | None = None
    outcome: Any = None
    results: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)
    exit_code: int = EXIT_OK
    timing: dict = field(default_factory=dict)

    def warn(self, operation: str, message: str) -> None:
        self.warnings.append({"operation": operation, "message": message})

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "RunReport":
        return cls(**data)

    def dumps(self, with_timing: bool = True) -> str:
        data = self.to_dict()
        if not with_timing:
            data.pop("timing")
        return json.dumps(data, indent=1)


# --------------------------------------------------------------------------- pipeline pieces


def _setup(cfg: RunConfig):
    d = build_domain(cfg.domain, cfg.modes, p_max=cfg.p_max)
    fam = family_from_dict(cfg.family)
    return d, fam


def _hypotheses(cfg, d, fam, report: RunReport):
    window = tuple(cfg.window)
    f1 = check_f1(fam, window)
    if not f1:
        report.warn("check_f1", f"growth condition fails; witness {f1.witness}")
    mu = cfg.f2_mu if cfg.f2_mu is not None else fam.mu
    f2_dict: dict[str, Any]
    try:
        mu = suggest_mu(fam) if mu is None else mu
        f2 = check_f2(fam, window, mu=mu, eps=cfg.f2_eps)
        f2_dict = f2.to_dict()
        if not f2:
            report.warn("check_f2", f"superquadraticity fails with mu={mu}; witness {f2.witness}")
    except Unsupported as exc:
        f2_dict = {"passed": False, "mu": None, "reason": str(exc)}
        report.warn("check_f2", str(exc))
    a1_ok, a1_wit = beta_monotone(fam, window)
    if not a1_ok:
        report.warn("beta_monotone", f"beta not strictly increasing near lam={a1_wit}")
    ups = bifurcation_values_in(fam, d, window)
    prof = None
    hyp = {"H1": None, "H2": None, "H3": None}
    try:
        prof = index_profile(d, fam, window, ups)
        hyp = check_hypotheses(prof, ups)
    except ContinuationViolation as exc:
        report.warn("index_profile", str(exc))
    report.hypotheses = {"f1": f1.to_dict(), "f2": f2_dict, "A1": {"passed": bool(a1_ok), "witness": a1_wit}, **hyp}
    report.upsilon = list(ups)
    report.profile = None if prof is None else prof.to_dict()
    ok = bool(f1) and bool(f2_dict["passed"]) and a1_ok and all(hyp.values())
    return ok, ups, prof, hyp


def _controls(cfg: RunConfig) -> BranchControls:
    return BranchControls(
        window=tuple(cfg.window), step_fraction=cfg.step_fraction, norm_budget=cfg.norm_budget,
        max_nodes=cfg.max_nodes, max_depth=cfg.max_depth, ds=cfg.ds, max_steps=cfg.max_steps,
        heteroclinics=cfg.heteroclinics, seed=int(cfg.seed),
    )


def _write_rows(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([_f(x) if isinstance(x, float) else x for x in r])


def _run_branch(cfg, d, fam, gamma, ups, prof, hyp, out: Path, report: RunReport, tag: str) -> tuple[dict, int]:
    g = build_global_branch(d, fam, gamma, _controls(cfg), upsilon=ups)
    for fl in g.flags:
        report.warn("build_global_branch", fl)
    outcome = classify(g, prof, ups, hypotheses=hyp)
    out.mkdir(parents=True, exist_ok=True)
    g.write_json(out / "graph.json")
    render_diagram(g, prof, path=out / "diagram.svg")
    for info, br in zip(g.branches, g.continued):
        br.write_csv(out / f"branch_b{info.id}.csv")
    if outcome.inconsistent:
        report.warn("classify", outcome.flags[-1])
        code = EXIT_INCONSISTENT
    elif outcome.classification == "UndeterminedBudget":
        code = EXIT_UNDETERMINED
    else:
        code = EXIT_OK
    res = {"gamma": g.gamma, "outcome": outcome.to_dict(), "artifacts": {
        "graph": f"{tag}graph.json", "diagram": f"{tag}diagram.svg",
        "branches": [f"{tag}branch_b{i.id}.csv" for i in g.branches]}}
    return res, code


def run(command: str, cfg: RunConfig) -> RunReport:
    """Execute one subcommand and write its artifacts under ``cfg.out``."""
    if command not in COMMANDS:
        raise InvalidArgument(f"unknown command {command!r}; choose from {COMMANDS}")
    if command in _RANDOM_COMMANDS and cfg.seed is None:
        raise InvalidArgument(f"'{command}' uses randomness; a seed is required")
    if command == "simulate" and cfg.initial is None and cfg.seed is None:
        raise InvalidArgument("'simulate' without an initial state draws one at random; a seed is required")
    t0 = time.perf_counter()
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    report = RunReport(command=command, config=cfg.to_dict())
    d, fam = _setup(cfg)
    code = EXIT_OK

    if command == "spectrum":
        rows = [(i + 1, "x".join(str(j) for j in idx), float(mu)) for i, (idx, mu) in
                enumerate(zip(d.indices, d.eigenvalues))]
        _write_rows(out / "spectrum.csv", ["index", "mode", "eigenvalue"], rows)
        report.results = {"eigenvalues": [float(x) for x in d.eigenvalues],
                          "distinct": [[mu, k] for mu, k in distinct_eigenvalues(d)]}
    elif command == "check":
        ok, *_ = _hypotheses(cfg, d, fam, report)
        code = EXIT_OK if ok else EXIT_HYPOTHESIS
    elif command == "bifvalues":
        ups = bifurcation_values_in(fam, d, tuple(cfg.window))
        report.upsilon = list(ups)
        _write_rows(out / "upsilon.csv", ["k", "lambda"], [(k + 1, float(g)) for k, g in enumerate(ups)])
    elif command == "profile":
        ups = bifurcation_values_in(fam, d, tuple(cfg.window))
        report.upsilon = list(ups)
        try:
            prof = index_profile(d, fam, tuple(cfg.window), ups)
        except ContinuationViolation as exc:
            report.warn("index_profile", str(exc))
            code = EXIT_INCONSISTENT
        else:
            report.profile = prof.to_dict()
            _write_rows(out / "profile.csv", ["lo", "hi", "index"],
                        [(float(a), float(b), str(v)) for (a, b), v in zip(prof.gaps, prof.values)])
    elif command in ("branch", "sweep"):
        ok, ups, prof, hyp = _hypotheses(cfg, d, fam, report)
        if not ups:
            raise InvalidArgument("no bifurcation value in the window")
        if command == "branch":
            gamma = ups[0] if cfg.gamma is None else cfg.gamma
            res, code = _run_branch(cfg, d, fam, gamma, ups, prof, hyp, out, report, "")
            report.outcome = res["outcome"]
            report.results = res
        else:
            runs, codes = [], []
            for k, gamma in enumerate(ups):
                res, c = _run_branch(cfg, d, fam, gamma, ups, prof, hyp, out / f"gamma_{k + 1}", report,
                                     f"gamma_{k + 1}/")
                runs.append(res)
                codes.append(c)
            report.results = {"runs": runs}
            report.outcome = [r["outcome"]["classification"] for r in runs]
            code = next((c for c in (EXIT_INCONSISTENT, EXIT_UNDETERMINED) if c in codes), EXIT_OK)
        if code == EXIT_OK and not ok:
            code = EXIT_HYPOTHESIS
    elif command == "simulate":
        if cfg.lam is None:
            raise InvalidArgument("'simulate' needs lam in the config")
        if cfg.initial is not None:
            a0 = np.array(cfg.initial)
        else:
            rng = np.random.default_rng(cfg.seed)
            a0 = 0.1 * rng.standard_normal(d.m) / np.sqrt(d.eigenvalues)
            report.results["initial"] = [float(x) for x in a0]
        rec = integrate(d, fam, cfg.lam, a0, horizon=cfg.horizon, tol=cfg.tol, norm_budget=cfg.norm_budget)
        rec.write_csv(out / "trajectory.csv")
        report.results.update({"status": rec.status, "t_end": float(rec.t[-1]),
                               "final": [float(x) for x in rec.states[-1]], "J_end": float(rec.J[-1])})

    report.exit_code = code
    report.timing = {"seconds": time.perf_counter() - t0}
    with open(out / "report.json", "w") as fh:
        fh.write(report.dumps())
        fh.write("\n")
    return report


# --------------------------------------------------------------------------- argv


def _window(text: str) -> list[float]:
    try:
        a, b = text.split(":")
        return [float(a), float(b)]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a:b, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dynbif", description=__doc__)
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", help="JSON run configuration")
    p.add_argument("--out", help="output directory")
    p.add_argument("--seed", type=int)
    p.add_argument("--modes", type=int)
    p.add_argument("--lambda-window", type=_window, dest="window", help="a:b (use --lambda-window=-5:1 for negatives)")
    p.add_argument("--norm-budget", type=float, dest="norm_budget")
    return p


def _summary(report: RunReport) -> str:
    lines = [f"{report.command}: exit {report.exit_code}"]
    if report.command == "spectrum":
        lines += [f"  {i + 1:3d}  {_f(mu)}" for i, mu in enumerate(report.results["eigenvalues"])]
    if report.upsilon:
        lines.append("  upsilon: " + ", ".join(_f(g) for g in report.upsilon))
    if report.profile:
        lines += [f"  ({_f(a)}, {_f(b)}): {v}" for a, b, v in report.profile["gaps"]]
    if report.hypotheses:
        lines.append("  hypotheses: " + ", ".join(
            f"{k}={v['passed'] if isinstance(v, dict) else v}" for k, v in report.hypotheses.items()))
    if report.outcome is not None:
        oc = report.outcome
        lines.append(f"  outcome: {oc['classification'] if isinstance(oc, dict) else oc}")
    for w in report.warnings:
        lines.append(f"  warning [{w['operation']}]: {w['message']}")
    return "\n".join(lines)


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        data = {}
        if args.config:
            with open(args.config) as fh:
                data = json.load(fh)
        for key in ("out", "seed", "modes", "window", "norm_budget"):
            v = getattr(args, key)
            if v is not None:
                data[key] = v
        cfg = RunConfig.from_dict(data)
        report = run(args.command, cfg)
    except (DynBifError, OSError, json.JSONDecodeError) as exc:
        print(f"dynbif: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    print(_summary(report))
    return report.exit_code


if __name__ == "__main__":
    sys.exit(main())
