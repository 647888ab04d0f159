"""Galerkin truncation of the nonclassical parabolic flow u_t - Lap u_t - Lap u = f(lam, u).

In the L2-orthonormal eigenbasis the flow reads

    (1 + mu_j) da_j/dt = fhat_j(a) - mu_j a_j,

whose linear part has spectrum mu/(1+mu) in (0, 1), so an explicit embedded
Runge-Kutta pair integrates it without stiffness. The energy

    J(a) = 1/2 sum mu_j a_j^2 - int F(lam, u)

satisfies dJ/dt = -(|u_t|^2 + ||u_t||^2) along solutions.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from dynbif.errors import IntegrationFailure, InvalidArgument, PreconditionViolation
from dynbif.nonlinearity import F2Result, NonlinearityFamily
from dynbif.spectral import SpectralDomain, tail_norms

__all__ = [
    "CONVERGED",
    "HORIZON",
    "NORM_BUDGET",
    "TrajectoryRecord",
    "vector_field",
    "energy",
    "dissipation_rate",
    "integrate",
    "integrate_batch",
    "sample_sphere_states",
    "TailDecayReport",
    "tail_decay_probe",
    "InfinityReport",
    "infinity_stability_probe",
]

CONVERGED = "converged-to-equilibrium"
HORIZON = "horizon-reached"
NORM_BUDGET = "norm-budget-exceeded"

DEFAULT_TOL = 1e-9
DEFAULT_HORIZON = 1e4
DEFAULT_NORM_BUDGET = 1e3

# Dormand-Prince 5(4)
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_B4 = np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])
_E = _B5 - _B4


def _check_state(d: SpectralDomain, state) -> np.ndarray:
    a = np.asarray(state, dtype=float)
    if a.shape[-1:] != (d.m,):
        raise InvalidArgument(f"state has {a.shape[-1] if a.ndim else 0} coefficients, domain has {d.m}")
    return a


def _rhs(d: SpectralDomain, fam: NonlinearityFamily, lam: float, A: np.ndarray) -> np.ndarray:
    fhat = d.from_grid(fam.f(lam, d.to_grid(A)))
    return (fhat - d.eigenvalues * A) / (1.0 + d.eigenvalues)


def vector_field(d: SpectralDomain, fam: NonlinearityFamily, lam: float, state) -> np.ndarray:
    return _rhs(d, fam, lam, _check_state(d, state))


def energy(d: SpectralDomain, fam: NonlinearityFamily, lam: float, state):
    a = _check_state(d, state)
    grad_part = 0.5 * np.sum(d.eigenvalues * a * a, axis=-1)
    pot = fam.F(lam, d.to_grid(a)) @ d.weights
    out = grad_part - pot
    return float(out) if np.ndim(out) == 0 else out


def dissipation_rate(d: SpectralDomain, fam: NonlinearityFamily, lam: float, state):
    adot = vector_field(d, fam, lam, state)
    out = -np.sum((1.0 + d.eigenvalues) * adot * adot, axis=-1)
    return float(out) if np.ndim(out) == 0 else out


# --------------------------------------------------------------------------- integrator


def integrate_batch(
    rhs: Callable[[np.ndarray], np.ndarray],
    Y0: np.ndarray,
    horizon: float,
    tol: float = DEFAULT_TOL,
    norm: Callable[[np.ndarray], np.ndarray] | None = None,
    norm_budget: float = DEFAULT_NORM_BUDGET,
    eq_tol: float | None = None,
    stop: Callable[[float, np.ndarray, np.ndarray], list] | None = None,
    on_accept: Callable[[float, np.ndarray, np.ndarray, np.ndarray], None] | None = None,
    h0: float | None = None,
    max_steps: int = 2_000_000,
):
    """Advance a batch of states with one shared adaptive step.

    ``stop`` may return a status string (or None) per active row; finished rows
    leave the batch. Returns final states, end times and statuses.
    """
    Y = np.array(Y0, dtype=float, copy=True)
    if Y.ndim != 2:
        raise InvalidArgument("batch states must be 2-D (batch, m)")
    B = Y.shape[0]
    norm = norm or (lambda X: np.sqrt(np.sum(X * X, axis=-1)))
    eq_tol = tol if eq_tol is None else eq_tol
    status: list[str | None] = [None] * B
    t_end = np.zeros(B)
    active = np.arange(B)
    t = 0.0
    K1 = rhs(Y)

    def settle(Ya, Ka):
        nonlocal active
        done = np.zeros(active.size, dtype=bool)
        speed = np.sqrt(np.sum(Ka * Ka, axis=-1))
        size = np.sqrt(np.sum(Ya * Ya, axis=-1))
        budget = norm(Ya) > norm_budget
        extra = stop(t, Ya, Ka) if stop is not None else [None] * active.size
        for i in range(active.size):
            g = active[i]
            if budget[i]:
                status[g] = NORM_BUDGET
            elif speed[i] <= eq_tol * (1.0 + size[i]):
                status[g] = CONVERGED
            elif extra[i] is not None:
                status[g] = extra[i]
            elif t >= horizon:
                status[g] = HORIZON
            else:
                continue
            t_end[g] = t
            done[i] = True
        return done

    if on_accept is not None:
        on_accept(t, Y, K1, active)
    done = settle(Y, K1)
    keep = ~done
    active, Ya, Ka = active[keep], Y[keep], K1[keep]

    if h0 is None:
        scale = tol + tol * np.abs(Ya) if Ya.size else np.ones(1)
        d0 = np.max(np.abs(Ya) / scale) if Ya.size else 1.0
        d1 = np.max(np.abs(Ka) / scale) if Ya.size else 1.0
        h = 0.01 * d0 / d1 if d0 > 1e-5 and d1 > 1e-5 else 1e-3
        h = float(min(max(h, 1e-6), 1.0))
    else:
        h = float(h0)

    steps = 0
    while active.size:
        steps += 1
        if steps > max_steps:
            raise IntegrationFailure(f"exceeded {max_steps} steps at t={t}")
        h = min(h, horizon - t)
        K = [Ka]
        for s in range(1, 7):
            Ys = Ya + h * sum(a * k for a, k in zip(_A[s], K) if a != 0.0)
            K.append(rhs(Ys))
        Ynew = Ys  # the 7th stage point is the 5th-order solution (FSAL)
        errv = h * sum(e * k for e, k in zip(_E, K) if e != 0.0)
        scale = tol + tol * np.maximum(np.abs(Ya), np.abs(Ynew))
        with np.errstate(invalid="ignore", over="ignore"):
            err = float(np.max(np.abs(errv) / scale))
        if not np.isfinite(err):
            err = 1e10
        if err <= 1.0:
            t = t + h
            Ya, Ka = Ynew, K[6]
            Y[active] = Ya
            if on_accept is not None:
                on_accept(t, Ya, Ka, active)
            done = settle(Ya, Ka)
            if done.any():
                keep = ~done
                active, Ya, Ka = active[keep], Ya[keep], Ka[keep]
            fac = 5.0 if err == 0 else min(5.0, max(0.2, 0.9 * err ** -0.2))
        else:
            fac = max(0.2, 0.9 * err ** -0.2)
        h *= fac
        if active.size and h < 1e-12 * (1.0 + abs(t)):
            raise IntegrationFailure(f"step size underflow (h={h:.3e}) at t={t:.6g}")
    return Y, t_end, status


@dataclass(frozen=True)
class TrajectoryRecord:
    lam: float
    t: np.ndarray
    states: np.ndarray
    J: np.ndarray
    dissipation: np.ndarray
    status: str
    h_norm: np.ndarray = field(repr=False, default=None)  # type: ignore[assignment]
    v_norm: np.ndarray = field(repr=False, default=None)  # type: ignore[assignment]

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]

    def lyapunov_excess(self, tol: float) -> np.ndarray:
        """Per-step J(t_{i+1}) - J(t_i) - 10 tol (1 + |J(t_i)|); positive entries violate monotonicity."""
        J = self.J
        return J[1:] - J[:-1] - 10.0 * tol * (1.0 + np.abs(J[:-1]))

    def rows(self):
        n = self.t.size
        for i in range(n):
            st = self.status if i == n - 1 else "running"
            yield (self.t[i], self.h_norm[i], self.v_norm[i], self.J[i], self.dissipation[i], st)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "h_norm", "v_norm", "J", "dissipation", "status"])
            for row in self.rows():
                w.writerow([format(x, ".17g") for x in row[:5]] + [row[5]])


def integrate(
    d: SpectralDomain,
    fam: NonlinearityFamily,
    lam: float,
    state0,
    horizon: float = DEFAULT_HORIZON,
    tol: float = DEFAULT_TOL,
    norm_budget: float = DEFAULT_NORM_BUDGET,
    stop: Callable[[float, np.ndarray], str | None] | None = None,
) -> TrajectoryRecord:
    """Integrate one trajectory, recording every accepted step."""
    a0 = _check_state(d, state0)
    if not (horizon > 0 and tol > 0 and norm_budget > 0):
        raise InvalidArgument("horizon, tol and norm_budget must be positive")
    ts: list[float] = []
    states: list[np.ndarray] = []
    adots: list[np.ndarray] = []

    def on_accept(t, Ya, Ka, active):
        ts.append(t)
        states.append(Ya[0].copy())
        adots.append(Ka[0].copy())

    batch_stop = None
    if stop is not None:
        batch_stop = lambda t, Ya, Ka: [stop(t, Ya[0])]  # noqa: E731

    _, _, status = integrate_batch(
        lambda A: _rhs(d, fam, lam, A),
        a0[None, :],
        horizon,
        tol=tol,
        norm=d.v_norm,
        norm_budget=norm_budget,
        stop=batch_stop,
        on_accept=on_accept,
    )
    S = np.array(states)
    K = np.array(adots)
    return TrajectoryRecord(
        lam=float(lam),
        t=np.array(ts),
        states=S,
        J=np.atleast_1d(energy(d, fam, lam, S)),
        dissipation=-np.sum((1.0 + d.eigenvalues) * K * K, axis=-1),
        status=status[0],
        h_norm=d.h_norm(S),
        v_norm=d.v_norm(S),
    )


def sample_sphere_states(rng: np.random.Generator, m: int, n: int, r_min: float, r_max: float) -> np.ndarray:
    """Uniform directions in coefficient space with log-uniform radii."""
    dirs = rng.standard_normal((n, m))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    radii = np.exp(rng.uniform(math.log(r_min), math.log(r_max), size=n))
    return dirs * radii[:, None]


# --------------------------------------------------------------------------- tail decay


@dataclass
class TailDecayReport:
    m0: int
    alpha: float
    E0: float
    floor: float
    holds: bool
    max_violation: float
    rate: float | None
    t: np.ndarray = field(repr=False)
    E: np.ndarray = field(repr=False)
    status: str = ""


def tail_decay_probe(
    d: SpectralDomain,
    fam: NonlinearityFamily,
    lam: float,
    state0,
    m0: int,
    horizon: float,
    tol: float = 1e-9,
    check_tol: float = 1e-8,
) -> TailDecayReport:
    """Check E(t) <= exp(-alpha t) E(0) + E_inf + tol for the tail energy above mode m0."""
    if not 0 <= m0 < d.m:
        raise InvalidArgument(f"m0 must lie in [0, {d.m - 1}]")
    rec = integrate(d, fam, lam, state0, horizon=horizon, tol=tol)
    E = np.array([sum(tail_norms(d, a, m0)) for a in rec.states])
    late = rec.t >= 0.9 * horizon
    floor = float(E[late].mean()) if late.any() else float(E[-1])
    alpha = min(d.mu1, 1.0)
    envelope = np.exp(-alpha * rec.t) * E[0] + floor + check_tol
    excess = E - envelope
    rate = None
    usable = E > max(1e-10 * E[0], floor * 1e3, 1e-300)
    if E[0] > 0 and usable.sum() >= 3:
        rate = float(-np.polyfit(rec.t[usable], np.log(E[usable]), 1)[0])
    return TailDecayReport(
        m0=m0,
        alpha=alpha,
        E0=float(E[0]),
        floor=floor,
        holds=bool(np.all(excess <= 0)),
        max_violation=float(max(0.0, excess.max())),
        rate=rate,
        t=rec.t,
        E=E,
        status=rec.status,
    )


# --------------------------------------------------------------------------- stability at infinity


@dataclass
class InfinityReport:
    mu: float
    eps: float
    C_eps: float
    C_prime: float
    R0: float
    R: float
    R1_theory: float
    R1_empirical: float | None
    n_states: int
    n_violations: int
    min_margin: float | None
    trajectories: list[dict] = field(default_factory=list)
    seed: int = 0

    @property
    def holds(self) -> bool:
        return self.n_violations == 0 and all(tr["min_norm"] > self.R for tr in self.trajectories
                                              if tr["r0"] >= self.R1_theory)


def _norm_growth(d, fam, lam, a) -> float:
    adot = vector_field(d, fam, lam, a)
    return float(2.0 * np.sum((1.0 + d.eigenvalues) * a * adot))


def _state_on_level(d, fam, lam, w, target, r_floor, r_cap=1e4):
    """Smallest r with ||r w|| >= r_floor and J(r w) = target, or None."""
    vw = float(d.v_norm(w))
    r_lo = r_floor / vw
    rs = r_lo * np.geomspace(1.0, max(r_cap / r_floor, 2.0), 400)
    J = energy(d, fam, lam, rs[:, None] * w[None, :]) - target
    if J[0] == 0:
        return rs[0] * w
    sign = np.sign(J)
    idx = np.nonzero(sign[:-1] * sign[1:] < 0)[0]
    if not idx.size:
        return None
    from scipy.optimize import brentq

    i = idx[0]
    r = brentq(lambda x: energy(d, fam, lam, x * w) - target, rs[i], rs[i + 1], xtol=1e-12)
    return r * w


def infinity_stability_probe(
    d: SpectralDomain,
    fam: NonlinearityFamily,
    window: tuple[float, float],
    c: float,
    samples: int,
    cert: F2Result,
    seed: int = 0,
    R: float | None = None,
    n_trajectories: int = 8,
    horizon: float = 50.0,
    tol: float = 1e-9,
) -> InfinityReport:
    """Pointwise and trajectory checks of norm growth on {|J| <= c} far from the origin."""
    if cert is None or not cert.passed or cert.C_eps is None:
        raise PreconditionViolation("family lacks a passing superquadraticity certificate")
    if not (cert.window[0] <= window[0] <= window[1] <= cert.window[1]):
        raise PreconditionViolation("probe window is not covered by the certificate window")
    if not c > 0:
        raise InvalidArgument("energy bound c must be positive")
    mu, eps = cert.mu, cert.eps
    if not 2.0 * eps / d.mu1 < (mu - 2.0) / 2.0:
        raise PreconditionViolation(
            f"certificate eps={eps} too large: need 2 eps / mu_1 < (mu - 2)/2 = {(mu - 2) / 2}"
        )
    C_prime = 2.0 * (c * mu + cert.C_eps * d.measure)
    R0 = 2.0 * math.sqrt(C_prime / (mu - 2.0))
    R = R0 if R is None else float(R)
    R1 = math.sqrt((d.mu1 + 1.0) / d.mu1) * R
    rng = np.random.default_rng(seed)

    n_ok = n_bad = 0
    margins = []
    attempts = 0
    while n_ok + n_bad < samples and attempts < 50 * samples:
        attempts += 1
        lam = float(rng.uniform(*window))
        w = rng.standard_normal(d.m)
        w /= np.linalg.norm(w)
        a = _state_on_level(d, fam, lam, w, float(rng.uniform(-c, c)), R0)
        if a is None:
            continue
        lhs = _norm_growth(d, fam, lam, a)
        rhs = 0.5 * (mu - 2.0) * float(d.v_norm(a)) ** 2 - C_prime
        margin = lhs - rhs
        margins.append(margin)
        if margin >= -1e-8 * (1.0 + abs(rhs)):
            n_ok += 1
        else:
            n_bad += 1

    trajectories = []
    r_starts = np.geomspace(max(R0, 0.5 * R1), 4.0 * R1, n_trajectories) if n_trajectories else []
    for r0 in r_starts:
        for _ in range(50):
            lam = float(rng.uniform(*window))
            w = rng.standard_normal(d.m)
            w /= np.linalg.norm(w)
            a0 = _state_on_level(d, fam, lam, w, float(rng.uniform(-c, c)), float(r0))
            if a0 is not None:
                break
        else:
            continue
        leave = lambda t, a, lam=lam: "left-level-set" if abs(energy(d, fam, lam, a)) > c else None  # noqa: E731
        rec = integrate(d, fam, lam, a0, horizon=horizon, tol=tol, stop=leave)
        inside = np.abs(rec.J) <= c
        vn = rec.v_norm[inside] if inside.any() else rec.v_norm[:1]
        trajectories.append({"lam": lam, "r0": float(d.v_norm(a0)), "min_norm": float(vn.min()),
                             "status": rec.status})

    R1_emp = None
    if trajectories:
        order = sorted(trajectories, key=lambda tr: tr["r0"])
        for i, tr in enumerate(order):
            if all(x["min_norm"] > R for x in order[i:]):
                R1_emp = tr["r0"]
                break
    return InfinityReport(
        mu=mu, eps=eps, C_eps=float(cert.C_eps), C_prime=C_prime, R0=R0, R=R, R1_theory=R1,
        R1_empirical=R1_emp, n_states=n_ok + n_bad, n_violations=n_bad,
        min_margin=float(min(margins)) if margins else None, trajectories=trajectories, seed=seed,
    )
