"""Approximate global bifurcation branch: equilibria on a lam-grid plus connecting orbits."""
from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

from dynbif.equilibria import (
    HYPERBOLICITY_THRESHOLD,
    ContinuedBranch,
    Equilibrium,
    _make,
    _pencil,
    branch_switch,
    continue_branch,
    newton_solve,
    same_equilibrium,
    solve_at,
)
from dynbif.errors import InvalidArgument, NonConvergence, OutOfRange
from dynbif.flow import CONVERGED, _rhs, energy, integrate_batch
from dynbif.nonlinearity import NonlinearityFamily, bifurcation_values_in
from dynbif.spectral import SpectralDomain

__all__ = [
    "Heteroclinic",
    "heteroclinics_at",
    "BranchControls",
    "Node",
    "Edge",
    "BranchInfo",
    "BranchGraph",
    "build_global_branch",
    "Section",
    "section",
    "j_set",
    "OutcomeReport",
    "classify",
    "GRAPH_LABEL",
]

GRAPH_LABEL = "Gamma approximation"
NEAR_EQUILIBRIUM = "near-equilibrium"


# --------------------------------------------------------------------------- connecting orbits


@dataclass
class Heteroclinic:
    lam: float
    source: int
    target: int | None
    kind: str  # "heteroclinic" or "open"
    reason: str = ""
    target_state: Equilibrium | None = field(default=None, repr=False)
    j_source: float = float("nan")
    j_target: float = float("nan")
    j_monotone: bool = True
    count: int = 1


def _unstable_directions(d, fam, eq: Equilibrium, rng: np.random.Generator) -> list[np.ndarray]:
    nu, W = _pencil(d, fam, eq.lam, eq.coeffs)
    U = W[:, nu > 0]
    r = U.shape[1]
    if r == 0:
        return []
    if r <= 2:
        base = [U[:, j] for j in range(r)]
    else:
        C = rng.standard_normal((4 * r // 2, r))
        base = [U @ c for c in C]
    out = []
    for v in base:
        v = v / d.v_norm(v)
        out.extend([v, -v])
    return out


def heteroclinics_at(
    d: SpectralDomain,
    fam: NonlinearityFamily,
    lam: float,
    equilibria: Sequence[Equilibrium],
    delta: float = 1e-3,
    horizon: float = 1e3,
    tol: float = 1e-8,
    stop_tol: float = 1e-6,
    match_tol: float = 1e-4,
    norm_budget: float = 1e3,
    seed: int = 0,
    discover: bool = True,
) -> list[Heteroclinic]:
    """Follow each unstable manifold from +-delta seeds and record where the orbits land.

    Indices in the returned edges refer to positions in ``equilibria``. A target of
    None with kind "heteroclinic" means an equilibrium that was not listed; it is
    attached as ``target_state``.
    """
    eqs = list(equilibria)
    for e in eqs:
        if e.margin <= HYPERBOLICITY_THRESHOLD:
            raise InvalidArgument(f"equilibrium at lam={e.lam} is not hyperbolic (margin {e.margin:.3e})")
        if abs(e.lam - lam) > 1e-12 * (1 + abs(lam)):
            raise InvalidArgument("all equilibria must be at the sweep's lam")
    rng = np.random.default_rng(seed)
    rows, src = [], []
    for i, e in enumerate(eqs):
        for v in _unstable_directions(d, fam, e, rng):
            rows.append(e.coeffs + delta * v)
            src.append(i)
    if not rows:
        return []
    targets = np.array([e.coeffs for e in eqs])
    Jt = np.array([energy(d, fam, lam, e.coeffs) for e in eqs])
    Y0 = np.array(rows)
    last_J = energy(d, fam, lam, Y0)
    mono = np.ones(len(rows), dtype=bool)

    def on_accept(t, Ya, Ka, active):
        J = energy(d, fam, lam, Ya)
        J = np.atleast_1d(J)
        rise = J > last_J[active] + 1e-12 * (1.0 + np.abs(last_J[active]))
        mono[active[rise]] = False
        last_J[active] = J

    def stop(t, Ya, Ka):
        diff = Ya[:, None, :] - targets[None, :, :]
        dist = np.sqrt(np.sum(d.eigenvalues * diff * diff, axis=-1))
        near = dist.min(axis=1) < stop_tol
        return [NEAR_EQUILIBRIUM if n else None for n in near]

    Y, _, status = integrate_batch(
        lambda A: _rhs(d, fam, lam, A), Y0, horizon, tol=tol, norm=d.v_norm,
        norm_budget=norm_budget, eq_tol=tol, stop=stop, on_accept=on_accept,
    )
    found: dict[tuple, Heteroclinic] = {}
    extra: list[Equilibrium] = []
    for row, (i, st) in enumerate(zip(src, status)):
        y = Y[row]
        key = None
        if st in (CONVERGED, NEAR_EQUILIBRIUM):
            dist = d.v_norm(y[None, :] - targets)
            j = int(np.argmin(dist))
            if dist[j] < match_tol and j != i:
                key = (i, j)
                edge = Heteroclinic(lam, i, j, "heteroclinic", j_source=float(Jt[i]), j_target=float(Jt[j]))
            elif discover and st == CONVERGED:
                try:
                    e = newton_solve(d, fam, lam, y)
                except NonConvergence:
                    e = None
                if e is not None and not any(same_equilibrium(e.coeffs, x.coeffs) for x in eqs):
                    k = next((n for n, x in enumerate(extra) if same_equilibrium(e.coeffs, x.coeffs)), None)
                    if k is None:
                        extra.append(e)
                        k = len(extra) - 1
                    key = (i, "new", k)
                    edge = Heteroclinic(lam, i, None, "heteroclinic", target_state=extra[k],
                                        j_source=float(Jt[i]), j_target=float(energy(d, fam, lam, e.coeffs)))
        if key is None:
            reason = st if st not in (CONVERGED, NEAR_EQUILIBRIUM) else "unmatched"
            key = (i, "open", reason)
            edge = Heteroclinic(lam, i, None, "open", reason=reason, j_source=float(Jt[i]))
        edge.j_monotone = bool(mono[row])
        if key in found:
            found[key].count += 1
            found[key].j_monotone &= edge.j_monotone
        else:
            found[key] = edge
    return list(found.values())


# --------------------------------------------------------------------------- graph


@dataclass
class BranchControls:
    window: tuple[float, float] = (0.5, 10.5)
    step_fraction: float = 0.05
    norm_budget: float = 1e3
    max_nodes: int = 20000
    max_depth: int = 2
    ds: float = 0.05
    max_steps: int = 2000
    heteroclinics: bool = True
    het_delta: float = 1e-3
    het_horizon: float = 1e3
    het_tol: float = 1e-8
    seed: int = 0

    def to_dict(self) -> dict:
        out = dict(self.__dict__)
        out["window"] = list(self.window)
        return out


@dataclass(frozen=True)
class Node:
    id: str
    lam: float
    coeffs: np.ndarray = field(repr=False)
    morse_index: int
    margin: float
    v_norm: float
    J: float
    trivial: bool
    branch: int | None = None
    arclength: float | None = None
    grid: int | None = None

    @property
    def signed_norm(self) -> float:
        if self.trivial:
            return 0.0
        k = int(np.argmax(np.abs(self.coeffs)))
        return float(np.sign(self.coeffs[k]) * self.v_norm)

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "lambda": self.lam,
            "morse_index": self.morse_index,
            "margin": self.margin,
            "v_norm": self.v_norm,
            "J": self.J,
            "trivial": self.trivial,
            "branch": self.branch,
            "arclength": self.arclength,
            "grid": self.grid,
            "coeffs": [float(c) for c in self.coeffs],
        }


@dataclass(frozen=True)
class Edge:
    kind: str  # continuation | heteroclinic | trivial-contact | open
    source: str
    target: str | None
    lam: float | None = None
    reason: str = ""

    def to_dict(self) -> dict:
        return {"kind": self.kind, "source": self.source, "target": self.target,
                "lambda": self.lam, "reason": self.reason}


@dataclass
class BranchInfo:
    id: int
    parent: str
    depth: int
    termination: str
    lams: np.ndarray = field(repr=False)
    signed_norms: np.ndarray = field(repr=False)
    morse: np.ndarray = field(repr=False)
    events: list[tuple[str, float]] = field(default_factory=list)
    trivial_hit: float | None = None

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "parent": self.parent,
            "depth": self.depth,
            "termination": self.termination,
            "trivial_hit": self.trivial_hit,
            "events": [[k, lam] for k, lam in self.events],
            "path": {
                "lambda": [float(x) for x in self.lams],
                "signed_v_norm": [float(x) for x in self.signed_norms],
                "morse_index": [int(x) for x in self.morse],
            },
        }


@dataclass
class BranchGraph:
    gamma: float
    window: tuple[float, float]
    upsilon: list[float]
    grid: list[float]
    nodes: dict[str, Node]
    edges: list[Edge]
    root: str
    component: frozenset[str]
    branches: list[BranchInfo]
    controls: BranchControls
    flags: list[str] = field(default_factory=list)
    continued: list[ContinuedBranch] = field(default_factory=list, repr=False)
    label: str = GRAPH_LABEL

    def component_nodes(self) -> list[Node]:
        return [n for i, n in self.nodes.items() if i in self.component]

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "gamma": self.gamma,
            "window": list(self.window),
            "upsilon": list(self.upsilon),
            "grid": list(self.grid),
            "root": self.root,
            "controls": self.controls.to_dict(),
            "flags": list(self.flags),
            "nodes": [n.to_dict() for n in self.nodes.values()],
            "edges": [e.to_dict() for e in self.edges],
            "component": sorted(self.component),
            "branches": [b.to_dict() for b in self.branches],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=False)

    def write_json(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_json())
            fh.write("\n")


def _lambda_grid(window, ups, frac) -> list[float]:
    """Window edges and bifurcation values as breakpoints; each gap split into 1/frac cells."""
    edges = [window[0], *ups, window[1]]
    n = max(1, int(round(1.0 / frac)))
    pts = set(edges)
    for a, b in zip(edges[:-1], edges[1:]):
        pts.update(round(float(x), 12) for x in np.linspace(a, b, n + 1)[1:-1])
    return sorted(pts)


def _refine(grid: list[float], event_lams: Sequence[float]) -> list[float]:
    """Halve the grid cells that contain an event."""
    pts = set(grid)
    for lam in event_lams:
        k = int(np.searchsorted(grid, lam))
        if 0 < k < len(grid):
            pts.add(round(0.5 * (grid[k - 1] + grid[k]), 12))
    return sorted(pts)


def _node_from(eq: Equilibrium, nid: str, d, fam, trivial=False, branch=None, s=None, grid=None) -> Node:
    return Node(nid, float(eq.lam), np.array(eq.coeffs, dtype=float), int(eq.morse_index), float(eq.margin),
                float(eq.v_norm), float(energy(d, fam, eq.lam, eq.coeffs)), trivial, branch, s, grid)


def _on_existing(d, fam, seed: Equilibrium, done: list[ContinuedBranch]) -> bool:
    for br in done:
        for _, e in solve_at(d, fam, br, seed.lam):
            if same_equilibrium(seed.coeffs, e.coeffs, rtol=1e-4):
                return True
    return False


def _signed(coeffs, vn):
    if not np.any(coeffs):
        return 0.0
    k = int(np.argmax(np.abs(coeffs)))
    return float(np.sign(coeffs[k]) * vn)


def build_global_branch(
    d: SpectralDomain,
    fam: NonlinearityFamily,
    gamma: float,
    controls: BranchControls | None = None,
    upsilon: Sequence[float] | None = None,
) -> BranchGraph:
    """Branch graph rooted at (0, gamma) over the lam-window in ``controls``."""
    c = controls or BranchControls()
    lo, hi = c.window
    if not lo < gamma < hi:
        raise InvalidArgument(f"gamma={gamma} must lie strictly inside the window {c.window}")
    ups = sorted(bifurcation_values_in(fam, d, c.window) if upsilon is None else upsilon)
    match = [g for g in ups if abs(g - gamma) <= 1e-6]
    if not match:
        raise InvalidArgument(f"gamma={gamma} is not a detected bifurcation value (within 1e-6)")
    gamma = match[0]
    flags: list[str] = []
    zeros = np.zeros(d.m)

    # --- continuation of every branch reachable by switching
    queue = deque([(_make(d, fam, gamma, zeros), "root", 0)])
    done: list[ContinuedBranch] = []
    infos: list[BranchInfo] = []
    switch_nodes: dict[str, tuple[Equilibrium, int, float]] = {}  # node id -> (eq, branch, arclength)
    n_points = 0
    while queue:
        at, parent, depth = queue.popleft()
        try:
            seeds = branch_switch(d, fam, at, seed=c.seed)
        except InvalidArgument as exc:
            flags.append(f"branch_switch at lam={at.lam:.12g}: {exc}")
            continue
        for seed in seeds:
            if n_points >= c.max_nodes:
                flags.append("node-budget-exhausted")
                queue.clear()
                break
            if _on_existing(d, fam, seed, done):
                continue
            br = continue_branch(d, fam, seed, direction="away", origin=at.coeffs, ds=c.ds,
                                 window=c.window, norm_budget=c.norm_budget, max_steps=c.max_steps)
            bid = len(done)
            done.append(br)
            n_points += len(br.points)
            pts = [at, *br.points]
            hit = next((ev.lam for ev in br.events if ev.kind == "trivial-intersection"), None)
            infos.append(BranchInfo(
                id=bid, parent=parent, depth=depth, termination=br.termination,
                lams=np.array([p.lam for p in pts]),
                signed_norms=np.array([_signed(p.coeffs, p.v_norm) for p in pts]),
                morse=np.array([p.morse_index for p in pts]),
                events=[(ev.kind, float(ev.lam)) for ev in br.events],
                trivial_hit=None if hit is None else float(hit),
            ))
            if br.termination in ("step-failure", "max-steps"):
                flags.append(f"branch b{bid} stopped by {br.termination} at lam={br.points[-1].lam:.12g}")
            folds = [ev.arclength for ev in br.events if ev.kind == "fold"]
            for j, ev in enumerate(br.events):
                if ev.kind != "index-change" or ev.coeffs is None:
                    continue
                if any(abs(ev.arclength - s) < 1e-3 for s in folds):
                    continue
                nid = f"e{bid}:{j}"
                eq = _make(d, fam, ev.lam, ev.coeffs)
                switch_nodes[nid] = (eq, bid, ev.arclength)
                if depth + 1 <= c.max_depth:
                    queue.append((eq, nid, depth + 1))
                else:
                    flags.append(f"depth budget: no switching at lam={ev.lam:.12g} on b{bid}")

    # --- lam-grid, refined around events
    grid = _lambda_grid(c.window, ups, c.step_fraction)
    ev_lams = [ev.lam for br in done for ev in br.events if ev.kind != "trivial-intersection"]
    grid = _refine(grid, ev_lams)

    nodes: dict[str, Node] = {}
    edges: list[Edge] = []
    chains: dict[int, list[tuple[float, str]]] = {i: [] for i in range(len(done))}
    for nid, (eq, bid, s) in switch_nodes.items():
        nodes[nid] = _node_from(eq, nid, d, fam, branch=bid, s=s)
        chains[bid].append((s, nid))
    on_grid: dict[int, list[str]] = {}
    grid_eq: dict[str, Equilibrium] = {}
    for k, lam in enumerate(grid):
        ids = []
        if lam == gamma:
            tid = "root"
        else:
            tid = f"trivial:{k}"
        grid_eq[tid] = _make(d, fam, lam, zeros)
        nodes[tid] = _node_from(grid_eq[tid], tid, d, fam, trivial=True, grid=k)
        ids.append(tid)
        for bid, br in enumerate(done):
            for step, eq in solve_at(d, fam, br, lam):
                pts, arc = br.points, br.arclength
                if pts[step].lam == lam or step == 0:
                    s = float(arc[step])
                else:
                    l0, l1 = pts[step - 1].lam, pts[step].lam
                    s = float(arc[step - 1] + (lam - l0) / (l1 - l0) * (arc[step] - arc[step - 1]))
                nid = f"b{bid}:{step}:{k}"
                nodes[nid] = _node_from(eq, nid, d, fam, branch=bid, s=s, grid=k)
                grid_eq[nid] = eq
                chains[bid].append((s, nid))
                ids.append(nid)
        on_grid[k] = ids

    # continuation links in arclength order; trivial contact closes a chain
    for bid, br in enumerate(done):
        chain = [nid for _, nid in sorted(chains[bid])]
        info = infos[bid]
        prev = info.parent
        for nid in chain:
            edges.append(Edge("continuation", prev, nid))
            prev = nid
        if info.trivial_hit is not None:
            xid = f"x{bid}"
            nodes[xid] = _node_from(_make(d, fam, info.trivial_hit, zeros), xid, d, fam, trivial=True, branch=bid)
            edges.append(Edge("trivial-contact", prev, xid, lam=info.trivial_hit))

    # connecting orbits at each grid lam
    if c.heteroclinics:
        for k, lam in enumerate(grid):
            if lam in ups:
                continue
            ids = [i for i in on_grid[k] if nodes[i].margin > HYPERBOLICITY_THRESHOLD]
            skipped = [i for i in on_grid[k] if i not in ids]
            if skipped:
                flags.append(f"heteroclinics_at lam={lam:.12g}: skipped non-hyperbolic {skipped}")
            eqs = [grid_eq[i] for i in ids]
            for h in heteroclinics_at(d, fam, lam, eqs, delta=c.het_delta, horizon=c.het_horizon,
                                      tol=c.het_tol, norm_budget=c.norm_budget, seed=c.seed + k):
                s_id = ids[h.source]
                if h.kind == "open":
                    edges.append(Edge("open", s_id, None, lam=lam, reason=h.reason))
                    continue
                if h.target is not None:
                    t_id = ids[h.target]
                else:
                    n_new = sum(1 for n in nodes if n.startswith(f"h:{k}:"))
                    t_id = next((n for n in nodes if n.startswith(f"h:{k}:")
                                 and same_equilibrium(nodes[n].coeffs, h.target_state.coeffs)), None)
                    if t_id is None:
                        t_id = f"h:{k}:{n_new}"
                        nodes[t_id] = _node_from(h.target_state, t_id, d, fam, grid=k)
                if not h.j_monotone:
                    flags.append(f"heteroclinics_at lam={lam:.12g}: J not monotone on {s_id}->{t_id}")
                edges.append(Edge("heteroclinic", s_id, t_id, lam=lam))

    component = _component("root", edges)
    return BranchGraph(gamma=gamma, window=(lo, hi), upsilon=list(ups), grid=grid, nodes=nodes, edges=edges,
                       root="root", component=frozenset(component), branches=infos, controls=c, flags=flags,
                       continued=done)


def _component(root: str, edges: Sequence[Edge]) -> set[str]:
    adj: dict[str, list[str]] = {}
    for e in edges:
        if e.target is None:
            continue
        adj.setdefault(e.source, []).append(e.target)
        adj.setdefault(e.target, []).append(e.source)
    seen = {root}
    todo = deque([root])
    while todo:
        u = todo.popleft()
        for v in adj.get(u, ()):
            if v not in seen:
                seen.add(v)
                todo.append(v)
    return seen


# --------------------------------------------------------------------------- queries


@dataclass
class Section:
    lam: float
    nodes: list[Node]
    edges: list[Edge]

    @property
    def nontrivial(self) -> list[Node]:
        return [n for n in self.nodes if not n.trivial]


def section(g: BranchGraph, lam: float) -> Section:
    lo, hi = g.window
    if not lo <= lam <= hi:
        raise OutOfRange(f"lam={lam} outside the explored window {g.window}")
    k = int(np.argmin([abs(x - lam) for x in g.grid]))
    nodes = [n for n in g.nodes.values() if n.grid == k and n.id in g.component]
    ids = {n.id for n in nodes}
    edges = [e for e in g.edges if e.kind == "heteroclinic" and e.source in ids and e.target in ids]
    return Section(lam=g.grid[k], nodes=nodes, edges=edges)


def j_set(g: BranchGraph) -> list[float]:
    lams = {g.gamma}
    for n in g.nodes.values():
        if n.trivial and n.id in g.component:
            lams.add(n.lam)
    return sorted(lams)


@dataclass
class OutcomeReport:
    classification: str
    mu0: float | None = None
    between: list[float] = field(default_factory=list)
    budgets: dict[str, Any] = field(default_factory=dict)
    evidence: dict[str, Any] = field(default_factory=dict)
    flags: list[str] = field(default_factory=list)
    inconsistent: bool = False
    label: str = GRAPH_LABEL

    def to_dict(self) -> dict:
        return {
            "classification": self.classification,
            "mu0": self.mu0,
            "between": list(self.between),
            "budgets": dict(self.budgets),
            "evidence": dict(self.evidence),
            "flags": list(self.flags),
            "inconsistent": self.inconsistent,
            "label": self.label,
        }


def classify(
    g: BranchGraph,
    profile=None,
    upsilon: Sequence[float] | None = None,
    budgets: dict[str, Any] | None = None,
    hypotheses: dict[str, bool] | None = None,
) -> OutcomeReport:
    """Decide which global alternative the explored component realizes."""
    ups = sorted(g.upsilon if upsilon is None else upsilon)
    comp = g.component_nodes()
    nontrivial = [n for n in comp if not n.trivial]
    bud = {"norm_budget": g.controls.norm_budget, "max_nodes": g.controls.max_nodes,
           "window": list(g.window), "nodes_used": len(g.nodes)}
    if budgets:
        bud.update(budgets)
    lam_span = [min(n.lam for n in nontrivial), max(n.lam for n in nontrivial)] if nontrivial else None
    evidence = {
        "lambda_range": lam_span,
        "max_v_norm": max((n.v_norm for n in nontrivial), default=0.0),
        "j_set": j_set(g),
        "terminations": [b.termination for b in g.branches],
    }
    in_comp = {b.id for b in g.branches
               if any(n.branch == b.id for n in comp) or b.parent == g.root}
    branches = [b for b in g.branches if b.id in in_comp]
    if any(b.termination == "norm-budget" for b in branches) or any(n.v_norm > g.controls.norm_budget for n in nontrivial):
        cls = "UnboundedInNorm"
    elif any(b.termination == "window-edge" for b in branches):
        cls = "UnboundedInLambda"
    else:
        hits = [b.trivial_hit for b in branches
                if b.trivial_hit is not None and abs(b.trivial_hit - g.gamma) > 1e-6]
        cls = "MeetsTrivialAt" if hits else "UndeterminedBudget"
    report = OutcomeReport(classification=cls, budgets=bud, evidence=evidence, flags=list(g.flags))
    if cls == "MeetsTrivialAt":
        mu0 = min(hits, key=lambda x: abs(x - g.gamma))
        lo, hi = sorted((g.gamma, mu0))
        report.mu0 = mu0
        report.between = [u for u in ups if lo + 1e-6 < u < hi - 1e-6]
        if hypotheses is None and profile is not None:
            from dynbif.conley import check_hypotheses
            hypotheses = check_hypotheses(profile, ups)
        if hypotheses and all(hypotheses.get(k) for k in ("H1", "H2", "H3")):
            report.inconsistent = True
            report.flags.append("consistency: H1-H3 hold, so the branch should be unbounded; "
                                "MeetsTrivialAt signals a numerical failure")
    return report
