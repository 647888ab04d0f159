"""Acceptance gate: one test per criterion, each printing a single PASS/FAIL line."""
from __future__ import annotations

import json
import math
import time

import numpy as np
import pytest

from dynbif.branch import BranchControls, build_global_branch, classify, section
from dynbif.cli import main
from dynbif.conley import (
    ZERO,
    Contradiction,
    HomotopyType,
    check_hypotheses,
    continuation_check,
    essential_test,
    factor_through_sphere,
    index_profile,
    sphere,
    wedge,
)
from dynbif.equilibria import branch_switch, continue_branch, newton_solve, residual, same_equilibrium, solve_at
from dynbif.errors import IsolationFailure, NonConvergence
from dynbif.nonlinearity import (
    AffineGain,
    PowerLaw,
    ScalarFunction,
    bifurcation_values,
    check_f1,
    check_f2,
    family_from_dict,
)
from dynbif.spectral import Interval, Rectangle, build_domain, distinct_eigenvalues

from test_flow import lyapunov_check


@pytest.fixture
def report(capsys):
    def emit(number: int, ok: bool, detail: str) -> None:
        with capsys.disabled():
            print(f"\ncriterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
    return emit


def _trivial(d, fam, lam):
    return newton_solve(d, fam, lam, np.zeros(d.m))


def test_criterion_01_spectrum(report):
    t0 = time.perf_counter()
    line = build_domain(Interval(), 20)
    err = float(np.max(np.abs(line.eigenvalues - np.arange(1, 21) ** 2)))
    sq = dict(distinct_eigenvalues(build_domain(Rectangle(), 16)))
    elapsed = time.perf_counter() - t0
    ok = err <= 1e-12 and sq.get(5.0) == 2 and sq.get(10.0) == 2 and elapsed < 1.0
    report(1, ok, f"max |mu_k - k^2| = {err:.1e}, square mult(5)={sq.get(5.0)} mult(10)={sq.get(10.0)}, {elapsed:.2f} s")
    assert ok


def test_criterion_02_bifurcation_values(report):
    d = build_domain(Interval(), 16)
    ident = bifurcation_values(PowerLaw(), d, 5)
    gain = AffineGain(g=ScalarFunction.from_spec([{"kind": "power", "coef": 2.0, "exponent": 1.0}]))
    doubled = bifurcation_values(gain, d, 5)
    k2 = np.arange(1, 6) ** 2
    err = max(np.max(np.abs(np.array(ident) - k2)), np.max(np.abs(np.array(doubled) - k2 / 2)))
    ok = err <= 1e-9
    report(2, ok, f"max error against k^2 and k^2/2 = {err:.1e}")
    assert ok


def _builtin_families():
    cubic_gain = [{"kind": "power", "coef": -1.0, "exponent": 3.0}]
    fams = [PowerLaw(alpha=a, p=p) for a in (-1.0, 1.0) for p in (2.0, 3.0, 5.0)]
    fams.append(family_from_dict({"name": "affine_gain", "g": [{"kind": "atan", "coef": 2.0}], "f": cubic_gain}))
    fams.append(family_from_dict({"name": "affine_gain"}))
    return fams


def test_criterion_03_trivial_index_law(report):
    line = build_domain(Interval(), 16)
    square = build_domain(Rectangle(), 16)
    cubic = PowerLaw(alpha=-1.0)
    prof = index_profile(line, cubic, (0.5, 10.5))
    line_ok = prof.values == [sphere(0), sphere(1), sphere(2), sphere(3)]
    sq = index_profile(square, cubic, (4.5, 5.5))
    jump = sq.values[1].dimension - sq.values[0].dimension
    hyp_ok = True
    for fam in _builtin_families():
        for d in (line, square):
            p = index_profile(d, fam, (0.3, 10.5))
            hyp_ok &= all(check_hypotheses(p).values())
            hyp_ok &= all(essential_test(p, g) == "essential" for g in p.upsilon)
    ok = line_ok and jump == 2 and hyp_ok
    report(3, ok, f"line profile {[str(v) for v in prof.values]}, square jump {jump}, H1-H3 on all families: {hyp_ok}")
    assert ok


def test_criterion_04_lyapunov(report):
    t0 = time.perf_counter()
    mono, rel, n_fd = lyapunov_check(n_traj=100, m=16)
    elapsed = time.perf_counter() - t0
    ok = mono <= 0.0 and rel <= 1e-4 and elapsed < 30.0
    report(4, ok, f"max J increase {mono:.1e}, worst FD rel error {rel:.1e} over {n_fd} samples, {elapsed:.1f} s")
    assert ok


def _amplitude(m):
    d = build_domain(Interval(), m)
    fam = PowerLaw(alpha=-1.0)
    seed = branch_switch(d, fam, _trivial(d, fam, 1.0))[0]
    br = continue_branch(d, fam, seed, direction=+1, ds=0.01, window=(0.5, 1.5))
    hits = solve_at(d, fam, br, 1.1)
    return abs(hits[0][1].coeffs[0])


def test_criterion_05_pitchfork_amplitude(report):
    pred = math.sqrt(2 * math.pi / 3 * 0.1)
    a8, a16 = _amplitude(8), _amplitude(16)
    e8, e16 = abs(a8 - pred) / pred, abs(a16 - pred) / pred
    ok = e8 <= 0.05 and e16 <= 0.01
    report(5, ok, f"prediction {pred:.6f}; m=8 {a8:.6f} ({e8:.2%}), m=16 {a16:.6f} ({e16:.2%})")
    assert ok


def test_criterion_06_global_branches(report):
    d = build_domain(Interval(), 16)
    t0 = time.perf_counter()
    sup = build_global_branch(d, PowerLaw(alpha=-1.0), 1.0, BranchControls(window=(0.5, 51.0), seed=0))
    t_sup = time.perf_counter() - t0
    t0 = time.perf_counter()
    sub = build_global_branch(d, PowerLaw(alpha=1.0), 1.0, BranchControls(window=(-49.0, 1.5), seed=0))
    t_sub = time.perf_counter() - t0
    c_sup, c_sub = classify(sup).classification, classify(sub).classification
    main_sup = sup.branches[0]
    order = np.argsort(main_sup.lams)
    growing = bool(np.all(np.diff(np.abs(main_sup.signed_norms[order])) > 0))
    reach = float(main_sup.lams.max())
    sub_exit = sub.branches[0].termination in ("window-edge", "norm-budget")
    ok = (c_sup == "UnboundedInLambda" and reach >= 51.0 - 1e-9 and growing
          and c_sub in ("UnboundedInLambda", "UnboundedInNorm") and sub_exit
          and t_sup < 300 and t_sub < 300)
    report(6, ok, f"alpha=-1: {c_sup}, reaches {reach:g}, monotone norm {growing}, {t_sup:.0f} s; "
                  f"alpha=+1: {c_sub} ({sub.branches[0].termination}), {t_sub:.0f} s")
    assert ok


def test_criterion_07_even_multiplicity(report):
    t0 = time.perf_counter()
    d = build_domain(Rectangle(), 16)
    fam = PowerLaw(alpha=-1.0)
    seeds = branch_switch(d, fam, _trivial(d, fam, 5.0))
    sols = []
    for s in seeds:
        # amplitude grows like sqrt(lam - gamma); rescale the switching seed to lam = 5.2
        guess = s.coeffs * math.sqrt((5.2 - 5.0) / (s.lam - 5.0))
        try:
            e = newton_solve(d, fam, 5.2, guess)
        except NonConvergence:
            continue
        if e.v_norm > 1e-6 and not any(same_equilibrium(e.coeffs, o.coeffs) for o in sols):
            sols.append(e)
    worst = max((float(np.linalg.norm(residual(d, fam, 5.2, e.coeffs))) for e in sols), default=float("inf"))
    elapsed = time.perf_counter() - t0
    ok = len(sols) >= 2 and worst <= 1e-10 and elapsed < 120
    report(7, ok, f"{len(sols)} distinct nontrivial solutions at 5.2, worst residual {worst:.1e}, {elapsed:.1f} s")
    assert ok


def test_criterion_08_heteroclinic_section(report, super_graph):
    sec = section(super_graph, 2.5)
    zero = [n for n in sec.nodes if n.trivial]
    nontriv = sec.nontrivial
    signs = sorted(float(np.sign(n.signed_norm)) for n in nontriv)
    symmetric = len(nontriv) == 2 and np.allclose(nontriv[0].coeffs, -nontriv[1].coeffs, atol=1e-8)
    pairs = {(e.source, e.target) for e in sec.edges}
    expected = {(zero[0].id, n.id) for n in nontriv} if zero else set()
    energy_ok = bool(zero) and all(zero[0].J > n.J for n in nontriv)
    ok = len(zero) == 1 and signs == [-1.0, 1.0] and symmetric and pairs == expected and energy_ok
    report(8, ok, f"section at {sec.lam:g}: {len(sec.nodes)} nodes, edges 0->+-u {pairs == expected}, "
                  f"J(0) > J(+-u) {energy_ok}")
    assert ok


def test_criterion_09_continuation_invariance(report):
    d = build_domain(Interval(), 16)
    fam = PowerLaw(alpha=-1.0)
    detail = []
    try:
        res = continuation_check(d, fam, (1.5, 3.5), radius=2.0)
        constant = res.constant
        detail.append(f"[1.5, 3.5]: constant {res.value}" if constant else f"[1.5, 3.5]: changes at {res.violated_at}")
    except IsolationFailure as exc:
        constant = False
        detail.append(f"[1.5, 3.5]: isolation failure ({exc})")
    try:
        continuation_check(d, fam, (1.5, 4.5), radius=2.0)
        straddle = False
        detail.append("[1.5, 4.5]: no failure reported")
    except IsolationFailure as exc:
        straddle = True
        detail.append(f"[1.5, 4.5]: isolation failure at {exc.lam:g}")
    ok = constant and straddle
    report(9, ok, "; ".join(detail))
    assert ok


def _forms(max_factors=4, max_p=5):
    import itertools
    out = [ZERO]
    for n in range(1, max_factors + 1):
        out.extend(HomotopyType(c) for c in itertools.combinations_with_replacement(range(max_p + 1), n))
    return out


def test_criterion_10_homotopy_algebra(report):
    forms = _forms()
    unit = all(wedge(a, ZERO) == a == wedge(ZERO, a) for a in forms)
    comm = all(wedge(a, b) == wedge(b, a) for a in forms for b in forms)
    small = _forms(2, 5)
    assoc = all(wedge(wedge(a, b), c) == wedge(a, wedge(b, c)) for a in small for b in small for c in small)
    dich = True
    for m in range(6):
        for known in forms:
            try:
                rest = factor_through_sphere(sphere(m), known)
                dich &= known in (ZERO, sphere(m)) and wedge(rest, known) == sphere(m)
            except Contradiction:
                dich &= known not in (ZERO, sphere(m))
    ok = unit and comm and assoc and dich
    report(10, ok, f"{len(forms)} forms: unit {unit}, commutative {comm}, associative {assoc}, wedge lemma {dich}")
    assert ok


def test_criterion_11_hypothesis_checkers(report):
    w = (-5.0, 5.0)
    a = check_f2(PowerLaw(alpha=1.0, p=3.0), w, mu=3.0).passed
    b = check_f2(PowerLaw(alpha=-1.0, p=3.0), w, mu=5.0).passed
    c = not check_f2(PowerLaw(alpha=1.0, p=3.0), w, mu=10.0).passed
    e = not check_f1(family_from_dict({"name": "custom", "ref": "exp_counterexample"}), (-10.0, 10.0)).passed
    ok = a and b and c and e
    report(11, ok, f"f2 (a=1, mu=3) {a}; f2 (a=-1, mu=5) {b}; f2 (a=1, mu=10) rejected {c}; f1 rejects exp {e}")
    assert ok


def test_criterion_12_determinism(report, tmp_path, capsys):
    cfg = {"domain": {"kind": "interval"}, "family": {"name": "power_law", "alpha": -1.0, "p": 3.0},
           "modes": 16, "window": [0.5, 10.5], "seed": 11}
    outs = []
    for k in range(2):
        path = tmp_path / f"cfg{k}.json"
        path.write_text(json.dumps({**cfg, "out": str(tmp_path / f"run{k}")}))
        main(["branch", "--config", str(path)])
        outs.append(tmp_path / f"run{k}")
    capsys.readouterr()
    same = {name: (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()
            for name in ("graph.json", "diagram.svg")}
    ok = all(same.values())
    report(12, ok, ", ".join(f"{k} identical {v}" for k, v in same.items()))
    assert ok
