from __future__ import annotations

import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dynbif.equilibria import (
    _make,
    branch_switch,
    conley_index,
    continue_branch,
    jacobian,
    linearization_inertia,
    newton_solve,
    same_equilibrium,
    solve_at,
)
from dynbif.errors import InvalidArgument, NonConvergence, NonHyperbolic
from dynbif.flow import integrate
from dynbif.homotopy import sphere
from dynbif.nonlinearity import PowerLaw
from dynbif.spectral import Interval, Rectangle, build_domain, distinct_eigenvalues

ONE_MODE_110 = math.sqrt(2 * math.pi / 3 * 0.1)


@pytest.fixture(scope="module")
def one():
    return build_domain(Interval(), 1)


def test_newton_examples(one, cubic):
    d = build_domain(Interval(), 6)
    eq = newton_solve(d, cubic, 2.0, np.zeros(6))
    assert eq.is_trivial and eq.residual == 0.0
    eq = newton_solve(one, cubic, 1.1, np.array([0.3]))
    assert eq.coeffs[0] == pytest.approx(ONE_MODE_110, rel=1e-10)
    assert ONE_MODE_110 == pytest.approx(0.4578, abs=5e-4)
    mirror = newton_solve(one, cubic, 1.1, np.array([-0.3]))
    assert mirror.coeffs[0] == pytest.approx(-ONE_MODE_110, rel=1e-10)


@pytest.mark.xfail(strict=True, reason="0.2 lies below the point where R' vanishes (0.264); Newton goes to 0")
def test_newton_from_small_guess_reaches_pitchfork_state(one, cubic):
    eq = newton_solve(one, cubic, 1.1, np.array([0.2]))
    assert eq.coeffs[0] == pytest.approx(ONE_MODE_110, rel=1e-6)


def test_newton_nonconvergence(cubic):
    d = build_domain(Interval(), 4)
    with pytest.raises(NonConvergence) as info:
        newton_solve(d, cubic, 2.0, np.full(4, 50.0), max_iter=2)
    assert info.value.best is not None
    with pytest.raises(InvalidArgument):
        newton_solve(d, cubic, 2.0, np.array([np.nan, 0, 0, 0]))


def test_inertia_examples(one, cubic):
    d = build_domain(Interval(), 6)
    p, margin, nu = linearization_inertia(d, cubic, 2.5, np.zeros(6))
    assert p == 1
    assert np.allclose(np.sort(nu), np.sort((2.5 - d.eigenvalues) / (1 + d.eigenvalues)))
    p, margin, _ = linearization_inertia(d, cubic, 0.5, np.zeros(6))
    assert p == 0 and margin == pytest.approx(0.25)
    eq = newton_solve(one, cubic, 1.1, np.array([0.3]))
    p, _, nu = linearization_inertia(one, cubic, 1.1, eq)
    assert p == 0 and nu[0] == pytest.approx(-2 * 0.1 / 2, rel=1e-9)


def test_conley_index_examples(cubic):
    d = build_domain(Interval(), 6)
    assert conley_index(newton_solve(d, cubic, 2.5, np.zeros(6))) == sphere(1)
    assert conley_index(newton_solve(d, cubic, 0.5, np.zeros(6))) == sphere(0)
    with pytest.raises(NonHyperbolic):
        conley_index(newton_solve(d, cubic, 4.0, np.zeros(6)))


@pytest.mark.parametrize("dom", [Interval(), Rectangle()])
def test_trivial_index_law(dom, cubic):
    d = build_domain(dom, 16)
    distinct = distinct_eigenvalues(d)
    mus = [mu for mu, _ in distinct][:5]
    probes = [0.5 * (a + b) for a, b in zip(mus[:-1], mus[1:])]
    prev = None
    for lam in probes:
        p = linearization_inertia(d, cubic, lam, np.zeros(16))[0]
        assert p == sum(k for mu, k in distinct if mu < lam)
        if prev is not None:
            jump = next(k for mu, k in distinct if prev < mu < lam)
            assert p - linearization_inertia(d, cubic, prev, np.zeros(16))[0] == jump
        prev = lam


def test_switch_examples(line16, square16, cubic):
    at = _make(line16, cubic, 1.0, np.zeros(16))
    seeds = branch_switch(line16, cubic, at)
    assert len(seeds) == 2
    assert np.allclose(seeds[0].coeffs, -seeds[1].coeffs, atol=1e-12)
    sq_at = _make(square16, cubic, 5.0, np.zeros(16))
    sq = branch_switch(square16, cubic, sq_at)
    classes = []
    for s in sq:
        if not any(same_equilibrium(s.coeffs, c.coeffs, rtol=1e-4) for c in classes):
            classes.append(s)
    assert len(classes) >= 2
    with pytest.raises(InvalidArgument):
        branch_switch(line16, cubic, at, delta=0.0)
    with pytest.raises(InvalidArgument):
        branch_switch(line16, cubic, _make(line16, cubic, 2.0, np.zeros(16)))


def test_supercritical_continuation(line16, cubic):
    seed = branch_switch(line16, cubic, _make(line16, cubic, 1.0, np.zeros(16)))[0]
    br = continue_branch(line16, cubic, seed, direction=+1, window=(0.5, 51.0))
    assert br.termination == "window-edge" and br.points[-1].lam == pytest.approx(51.0)
    assert np.all(np.diff(br.v_norms) > 0)
    assert all(p.morse_index == 0 for p in br.points)
    assert all(p.residual <= 1e-10 * (1 + p.v_norm) for p in br.points)


def test_subcritical_continuation(line16, cubic_sub):
    seed = branch_switch(line16, cubic_sub, _make(line16, cubic_sub, 1.0, np.zeros(16)))[0]
    br = continue_branch(line16, cubic_sub, seed, direction="away", window=(-49.0, 1.5))
    assert br.termination == "window-edge" and br.points[-1].lam == pytest.approx(-49.0)
    assert br.points[1].morse_index == 1


def test_trivial_branch_index_events(cubic):
    d = build_domain(Interval(), 6)
    br = continue_branch(d, cubic, newton_solve(d, cubic, 0.5, np.zeros(6)), direction=+1, ds=0.3,
                         window=(0.5, 10.0))
    changes = [ev for ev in br.events if ev.kind == "index-change"]
    assert [ev.lam for ev in changes] == pytest.approx([1.0, 4.0, 9.0], abs=1e-8)
    assert all(ev.new_index - ev.old_index == 1 for ev in changes)


def test_fold_detection():
    # lam s + s^3 - s^5: subcritical start that turns back at a fold
    fam = PowerLaw(alpha=1.0, p=3.0, beta_c=-1.0, q=5.0)
    d = build_domain(Interval(), 8)
    seed = branch_switch(d, fam, _make(d, fam, 1.0, np.zeros(8)))[0]
    br = continue_branch(d, fam, seed, direction="away", window=(-5.0, 5.0), ds=0.02)
    folds = [ev for ev in br.events if ev.kind == "fold"]
    assert len(folds) == 1 and folds[0].lam < 1.0
    i = max(j for j in range(len(br.points)) if br.arclength[j] < folds[0].arclength)
    det_before = np.linalg.det(jacobian(d, fam, br.points[i].lam, br.points[i].coeffs))
    det_after = np.linalg.det(jacobian(d, fam, br.points[i + 1].lam, br.points[i + 1].coeffs))
    assert det_before * det_after < 0
    for ev in br.events:
        if ev.kind == "index-change":
            assert ev.new_index != ev.old_index


def test_m_refinement(cubic):
    amps = []
    for m in (8, 16):
        d = build_domain(Interval(), m)
        amps.append(newton_solve(d, cubic, 1.1, 0.4 * np.eye(m)[0]).coeffs[0])
    assert abs(amps[1] - amps[0]) < 0.01 * abs(amps[1])


def test_newton_solutions_are_stationary(cubic):
    d = build_domain(Interval(), 8)
    eq = newton_solve(d, cubic, 2.5, 0.5 * np.eye(8)[0])
    rec = integrate(d, cubic, 2.5, eq.coeffs, horizon=100.0)
    assert np.max(d.v_norm(rec.states - eq.coeffs)) < 1e-6


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-1.5, 1.5), min_size=6, max_size=6), st.floats(0.0, 12.0))
def test_odd_symmetry(coeffs, lam):
    d = build_domain(Interval(), 6)
    fam = PowerLaw(alpha=-1.0)
    g = np.array(coeffs)
    try:
        plus = newton_solve(d, fam, lam, g)
    except NonConvergence:
        return
    minus = newton_solve(d, fam, lam, -g)
    assert np.allclose(minus.coeffs, -plus.coeffs, atol=1e-9)


def test_branch_csv_and_solve_at(tmp_path, line16, cubic):
    seed = branch_switch(line16, cubic, _make(line16, cubic, 1.0, np.zeros(16)))[0]
    br = continue_branch(line16, cubic, seed, direction=+1, window=(0.5, 3.0))
    path = tmp_path / "b.csv"
    br.write_csv(path)
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["arclength", "lambda", "h_norm", "v_norm", "morse_index", "margin", "event"]
    assert len(rows) == len(br.points) + 1
    hits = solve_at(line16, cubic, br, 2.5)
    assert len(hits) == 1 and hits[0][1].lam == 2.5
    assert abs(hits[0][1].coeffs[0]) > 0
