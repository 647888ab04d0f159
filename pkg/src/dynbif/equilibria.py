"""Galerkin equilibria: Newton solves, linearized inertia, pseudo-arclength continuation."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Literal, Sequence

import numpy as np

from dynbif.errors import InvalidArgument, NonConvergence, NonHyperbolic
from dynbif.homotopy import HomotopyType, sphere
from dynbif.nonlinearity import NonlinearityFamily
from dynbif.spectral import SpectralDomain

__all__ = [
    "Equilibrium",
    "Event",
    "ContinuedBranch",
    "residual",
    "jacobian",
    "newton_solve",
    "linearization_inertia",
    "conley_index",
    "continue_branch",
    "branch_switch",
    "solve_at",
    "same_equilibrium",
]

NEWTON_RTOL = 1e-10
HYPERBOLICITY_THRESHOLD = 1e-8
SWITCH_DELTA = 1e-2
SWITCH_DLAM = 1e-3


@dataclass(frozen=True, eq=False)
class Equilibrium:
    lam: float
    coeffs: np.ndarray
    residual: float
    morse_index: int
    margin: float
    nu: np.ndarray = field(repr=False)
    h_norm: float = 0.0
    v_norm: float = 0.0
    converged: bool = True

    @property
    def is_trivial(self) -> bool:
        return not np.any(self.coeffs)


def residual(d: SpectralDomain, fam: NonlinearityFamily, lam: float, a: np.ndarray) -> np.ndarray:
    return d.eigenvalues * a - d.from_grid(fam.f(lam, d.to_grid(a)))


def _fprime_matrix(d, fam, lam, a) -> np.ndarray:
    fp = fam.dfds(lam, d.to_grid(a))
    return d.basis.T @ ((d.weights * fp)[:, None] * d.basis)


def jacobian(d: SpectralDomain, fam: NonlinearityFamily, lam: float, a: np.ndarray) -> np.ndarray:
    return np.diag(d.eigenvalues) - _fprime_matrix(d, fam, lam, a)


def _dres_dlam(d, fam, lam, a) -> np.ndarray:
    return -d.from_grid(fam.dfdlam(lam, d.to_grid(a)))


def _pencil(d, fam, lam, a):
    """Eigenpairs of (F' - diag mu) v = nu (I + diag mu) v, ascending nu."""
    s = 1.0 / np.sqrt(1.0 + d.eigenvalues)
    M = -jacobian(d, fam, lam, a)
    M = 0.5 * (M + M.T)
    nu, W = np.linalg.eigh(s[:, None] * M * s[None, :])
    return nu, s[:, None] * W


def linearization_inertia(d: SpectralDomain, fam: NonlinearityFamily, lam: float, eq) -> tuple[int, float, np.ndarray]:
    """(Morse index, hyperbolicity margin, pencil eigenvalues) at an equilibrium."""
    a = eq.coeffs if isinstance(eq, Equilibrium) else np.asarray(eq, dtype=float)
    nu, _ = _pencil(d, fam, lam, a)
    return int(np.sum(nu > 0)), float(np.min(np.abs(nu))), nu


def _make(d, fam, lam, a, converged=True) -> Equilibrium:
    r = float(np.linalg.norm(residual(d, fam, lam, a)))
    p, margin, nu = linearization_inertia(d, fam, lam, a)
    return Equilibrium(
        lam=float(lam), coeffs=a, residual=r, morse_index=p, margin=margin, nu=nu,
        h_norm=float(d.h_norm(a)), v_norm=float(d.v_norm(a)), converged=converged,
    )


def newton_solve(
    d: SpectralDomain,
    fam: NonlinearityFamily,
    lam: float,
    guess,
    tol: float = NEWTON_RTOL,
    max_iter: int = 50,
) -> Equilibrium:
    """Damped Newton on diag(mu) a - fhat(a) = 0 at fixed lam."""
    a = np.array(guess, dtype=float)
    if a.shape != (d.m,) or not np.all(np.isfinite(a)):
        raise InvalidArgument("guess must be a finite vector of length m")
    R = residual(d, fam, lam, a)
    rn = np.linalg.norm(R)
    for _ in range(max_iter + 1):
        if rn <= tol * (1.0 + np.linalg.norm(a)):
            # one extra full step is nearly free at quadratic convergence; keep it if it helps
            try:
                a_pol = a + np.linalg.solve(jacobian(d, fam, lam, a), -R)
                if np.linalg.norm(residual(d, fam, lam, a_pol)) < rn:
                    a = a_pol
            except np.linalg.LinAlgError:
                pass
            return _make(d, fam, lam, a)
        try:
            step = np.linalg.solve(jacobian(d, fam, lam, a), -R)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(jacobian(d, fam, lam, a), -R, rcond=None)[0]
        t = 1.0
        while True:
            a_try = a + t * step
            R_try = residual(d, fam, lam, a_try)
            rn_try = np.linalg.norm(R_try)
            if rn_try < (1.0 - 1e-4 * t) * rn or t < 1.0 / 1024:
                break
            t *= 0.5
        a, R, rn = a_try, R_try, rn_try
    raise NonConvergence(f"Newton did not converge at lam={lam} (|R|={rn:.3e})",
                         best=_make(d, fam, lam, a, converged=False))


def conley_index(eq: Equilibrium, threshold: float = HYPERBOLICITY_THRESHOLD) -> HomotopyType:
    if eq.margin <= threshold:
        raise NonHyperbolic(f"equilibrium at lam={eq.lam} has margin {eq.margin:.3e}")
    return sphere(eq.morse_index)


def same_equilibrium(a: np.ndarray, b: np.ndarray, rtol: float = 1e-6) -> bool:
    return bool(np.linalg.norm(a - b) < rtol * (1.0 + max(np.linalg.norm(a), np.linalg.norm(b))))


# --------------------------------------------------------------------------- continuation


@dataclass(frozen=True)
class Event:
    kind: Literal["fold", "index-change", "trivial-intersection"]
    lam: float
    arclength: float
    step: int
    old_index: int | None = None
    new_index: int | None = None
    coeffs: np.ndarray | None = field(default=None, repr=False)


@dataclass
class ContinuedBranch:
    points: list[Equilibrium]
    arclength: np.ndarray
    events: list[Event]
    termination: str
    trivial: bool = False

    @property
    def lams(self) -> np.ndarray:
        return np.array([p.lam for p in self.points])

    @property
    def v_norms(self) -> np.ndarray:
        return np.array([p.v_norm for p in self.points])

    def rows(self):
        tags: dict[int, list[str]] = {}
        for ev in self.events:
            tags.setdefault(ev.step, []).append(ev.kind)
        for i, (s, p) in enumerate(zip(self.arclength, self.points)):
            yield (s, p.lam, p.h_norm, p.v_norm, p.morse_index, p.margin, ";".join(tags.get(i, [])))

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["arclength", "lambda", "h_norm", "v_norm", "morse_index", "margin", "event"])
            for s, lam, hn, vn, p, mg, ev in self.rows():
                w.writerow([format(s, ".17g"), format(lam, ".17g"), format(hn, ".17g"),
                            format(vn, ".17g"), p, format(mg, ".17g"), ev])


def _augmented_jac(d, fam, x, t):
    a, lam = x[:-1], x[-1]
    Ga = jacobian(d, fam, lam, a)
    Gl = _dres_dlam(d, fam, lam, a)
    return np.vstack([np.column_stack([Ga, Gl]), t[None, :]])


def _tangent(d, fam, x, t_prev):
    a, lam = x[:-1], x[-1]
    if not np.any(a):
        t = np.zeros_like(x)
        t[-1] = 1.0
    else:
        G = np.column_stack([jacobian(d, fam, lam, a), _dres_dlam(d, fam, lam, a)])
        _, _, Vt = np.linalg.svd(G)
        t = Vt[-1]
    if t_prev is not None and t @ t_prev < 0:
        t = -t
    return t / np.linalg.norm(t)


def _corrector(d, fam, x_prev, t, ds, tol=NEWTON_RTOL, max_iter=8):
    """Newton on [R(x); t.(x - x_prev) - ds]; returns (x, iterations) or (None, iters)."""
    x = x_prev + ds * t
    if not np.any(x_prev[:-1]) and not np.any(t[:-1]):
        return x, 0  # along the trivial line
    for it in range(max_iter + 1):
        a, lam = x[:-1], x[-1]
        R = residual(d, fam, lam, a)
        if not np.all(np.isfinite(R)):
            return None, it
        if np.linalg.norm(R) <= tol * (1.0 + np.linalg.norm(a)) and it > 0:
            return x, it
        if it == max_iter:
            break
        H = np.append(R, t @ (x - x_prev) - ds)
        try:
            dx = np.linalg.solve(_augmented_jac(d, fam, x, t), -H)
        except np.linalg.LinAlgError:
            return None, it
        x = x + dx
    return None, max_iter


def continue_branch(
    d: SpectralDomain,
    fam: NonlinearityFamily,
    start: Equilibrium,
    direction: float | str = 1.0,
    ds: float = 0.05,
    window: tuple[float, float] = (-np.inf, np.inf),
    norm_budget: float = 1e3,
    max_steps: int = 2000,
    ds_min: float = 1e-8,
    ds_max: float = 1.0,
    origin: np.ndarray | None = None,
    refine_tol: float = 1e-8,
) -> ContinuedBranch:
    """Pseudo-arclength continuation from ``start``.

    ``direction`` is +1/-1 for the sign of the initial lam-velocity, or "away"
    to move so that the distance from ``origin`` (default 0) grows.
    """
    if not ds > 0:
        raise InvalidArgument("ds must be positive")
    lo, hi = window
    x = np.append(start.coeffs, start.lam)
    trivial = not np.any(start.coeffs)
    t = _tangent(d, fam, x, None)
    if direction == "away":
        ref = np.zeros(d.m) if origin is None else np.asarray(origin, dtype=float)
        if t[:-1] @ (start.coeffs - ref) < 0:
            t = -t
    else:
        if np.sign(t[-1]) != np.sign(direction) and t[-1] != 0:
            t = -t
    points = [start]
    arc = [0.0]
    events: list[Event] = []
    s_total = 0.0
    h = min(ds, ds_max)
    termination = "max-steps"

    for step in range(1, max_steps + 1):
        x_new, iters = _corrector(d, fam, x, t, h)
        ok = x_new is not None
        if ok:
            t_new = _tangent(d, fam, x_new, t)
            if t_new @ t < 0.8 or np.linalg.norm(x_new - (x + h * t)) > 0.5 * h:
                ok = iters == 0  # trivial line never needs rejection
        if not ok:
            h *= 0.5
            if h < ds_min:
                termination = "step-failure"
                break
            continue

        a_new, lam_new = x_new[:-1], x_new[-1]
        # window edge: solve exactly on the edge and stop
        edge = hi if lam_new > hi else lo if lam_new < lo else None
        if edge is not None:
            theta = (edge - x[-1]) / (lam_new - x[-1])
            guess = x[:-1] + theta * (a_new - x[:-1])
            try:
                eq = newton_solve(d, fam, edge, guess)
            except NonConvergence:
                termination = "step-failure"
                break
            s_total += theta * h
            _record_transitions(d, fam, points[-1], eq, x, t, theta * h, s_total, len(points), events, refine_tol)
            points.append(eq)
            arc.append(s_total)
            termination = "window-edge"
            break

        eq = _make(d, fam, lam_new, a_new)
        s_prev = s_total
        s_total += h
        if not trivial:
            hit = _trivial_hit(x[:-1], a_new)
            if hit is not None:
                lam_hit = x[-1] + hit * (lam_new - x[-1])
                events.append(Event("trivial-intersection", float(lam_hit), s_prev + hit * h, len(points),
                                    coeffs=np.zeros(d.m)))
                points.append(eq)
                arc.append(s_total)
                termination = "trivial-intersection"
                break
        _record_transitions(d, fam, points[-1], eq, x, t, h, s_total, len(points), events, refine_tol)
        if np.sign(t_new[-1]) != np.sign(t[-1]) and t[-1] != 0 and t_new[-1] != 0:
            w = t[-1] / (t[-1] - t_new[-1])
            events.append(Event("fold", float(x[-1] + w * (lam_new - x[-1])), s_prev + w * h, len(points)))
        points.append(eq)
        arc.append(s_total)
        x, t = x_new, t_new
        if eq.v_norm > norm_budget:
            termination = "norm-budget"
            break
        if iters <= 3:
            h = min(h * 1.3, ds_max)
    return ContinuedBranch(points=points, arclength=np.array(arc), events=events,
                           termination=termination, trivial=trivial)


def _trivial_hit(a_prev: np.ndarray, a_new: np.ndarray) -> float | None:
    """Fraction along the segment where it passes through (or lands on) the trivial state."""
    if np.linalg.norm(a_new) < 1e-9:
        return 1.0
    if a_prev @ a_new >= 0:
        return None
    seg = a_new - a_prev
    theta = float(np.clip(-(a_prev @ seg) / (seg @ seg), 0.0, 1.0))
    closest = np.linalg.norm(a_prev + theta * seg)
    if closest < 0.25 * np.linalg.norm(seg):
        return theta
    return None


def _record_transitions(d, fam, prev: Equilibrium, new: Equilibrium, x_prev, t, h, s_end, step, events, refine_tol):
    if new.morse_index == prev.morse_index:
        return
    lo_s, hi_s = 0.0, h
    p0 = prev.morse_index
    x_mid = None
    while hi_s - lo_s > refine_tol:
        mid = 0.5 * (lo_s + hi_s)
        xm, _ = _corrector(d, fam, x_prev, t, mid, max_iter=12)
        if xm is None:
            break
        x_mid = xm
        pm = int(np.sum(linearization_inertia(d, fam, xm[-1], xm[:-1])[2] > 0))
        if pm == p0:
            lo_s = mid
        else:
            hi_s = mid
    s_star = 0.5 * (lo_s + hi_s)
    if x_mid is None:
        lam_star = prev.lam + (s_star / h) * (new.lam - prev.lam)
        coeffs = prev.coeffs + (s_star / h) * (new.coeffs - prev.coeffs)
    else:
        xs, _ = _corrector(d, fam, x_prev, t, s_star, max_iter=12)
        xs = x_mid if xs is None else xs
        lam_star, coeffs = float(xs[-1]), xs[:-1].copy()
    events.append(Event("index-change", float(lam_star), s_end - h + s_star, step,
                        old_index=p0, new_index=new.morse_index, coeffs=coeffs))


def branch_switch(
    d: SpectralDomain,
    fam: NonlinearityFamily,
    at: Equilibrium,
    delta: float = SWITCH_DELTA,
    dlam: float = SWITCH_DLAM,
    kernel_tol: float = 1e-6,
    seed: int = 0,
) -> list[Equilibrium]:
    """Seed new branches at a non-hyperbolic point.

    Each kernel direction w gives a seed solved with the amplitude pinned,
    w.(a - a*) = delta, and lam free; lam starts at lam* + dlam.
    """
    if not delta > 0:
        raise InvalidArgument("seed amplitude delta must be positive")
    nu, W = _pencil(d, fam, at.lam, at.coeffs)
    near = np.abs(nu) < kernel_tol
    if not near.any():
        raise InvalidArgument(f"no near-zero eigenvalue at lam={at.lam} (min |nu| = {np.min(np.abs(nu)):.3e})")
    K, _ = np.linalg.qr(W[:, near])
    r = K.shape[1]
    if r == 1:
        dirs = [K[:, 0], -K[:, 0]]
    elif r == 2:
        ang = 2 * np.pi * np.arange(8 * r) / (8 * r)
        dirs = [K @ np.array([np.cos(th), np.sin(th)]) for th in ang]
    else:
        rng = np.random.default_rng(seed)
        C = rng.standard_normal((8 * r, r))
        C /= np.linalg.norm(C, axis=1, keepdims=True)
        dirs = [K @ c for c in C]

    seeds: list[Equilibrium] = []
    for w in dirs:
        eq = _pinned_solve(d, fam, at, w, delta, dlam)
        if eq is None:
            continue
        if any(same_equilibrium(eq.coeffs, s.coeffs) and abs(eq.lam - s.lam) < 1e-8 for s in seeds):
            continue
        seeds.append(eq)
    return seeds


def _pinned_solve(d, fam, at, w, delta, dlam, max_iter=50):
    a_star = at.coeffs
    x = np.append(a_star + delta * w, at.lam + dlam)
    for _ in range(max_iter):
        a, lam = x[:-1], x[-1]
        R = residual(d, fam, lam, a)
        if not np.all(np.isfinite(R)):
            return None
        H = np.append(R, w @ (a - a_star) - delta)
        if np.linalg.norm(R) <= NEWTON_RTOL * (1.0 + np.linalg.norm(a)) and abs(H[-1]) < 1e-12:
            if np.linalg.norm(a - a_star) < 0.5 * delta:
                return None
            return _make(d, fam, lam, a)
        Jm = np.vstack([np.column_stack([jacobian(d, fam, lam, a), _dres_dlam(d, fam, lam, a)]),
                        np.append(w, 0.0)[None, :]])
        try:
            x = x + np.linalg.solve(Jm, -H)
        except np.linalg.LinAlgError:
            return None
    return None


def solve_at(
    d: SpectralDomain,
    fam: NonlinearityFamily,
    branch: ContinuedBranch,
    lam: float,
) -> list[tuple[int, Equilibrium]]:
    """Equilibria where the branch crosses ``lam``, tagged by the branch step index."""
    out: list[tuple[int, Equilibrium]] = []
    pts = branch.points
    for i in range(len(pts) - 1):
        l0, l1 = pts[i].lam, pts[i + 1].lam
        if l0 == lam:
            out.append((i, pts[i]))
            continue
        if (l0 - lam) * (l1 - lam) < 0:
            theta = (lam - l0) / (l1 - l0)
            guess = pts[i].coeffs + theta * (pts[i + 1].coeffs - pts[i].coeffs)
            try:
                out.append((i + 1, newton_solve(d, fam, lam, guess)))
            except NonConvergence:
                continue
    if pts and pts[-1].lam == lam and len(pts) > 1:
        out.append((len(pts) - 1, pts[-1]))
    return out
