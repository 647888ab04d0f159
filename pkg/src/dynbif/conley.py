"""Conley-index bookkeeping along the trivial branch and inside balls.

Indices of hyperbolic equilibria are pointed spheres; disjoint unions wedge.
Everything here works with those formal values (see ``dynbif.homotopy``).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import reduce
from typing import Sequence

import numpy as np

from dynbif.equilibria import (
    Equilibrium,
    conley_index,
    linearization_inertia,
    newton_solve,
    same_equilibrium,
)
from dynbif.errors import (
    ContinuationViolation,
    InvalidArgument,
    IsolationFailure,
    NonConvergence,
    NonHyperbolic,
)
from dynbif.homotopy import ZERO, Contradiction, HomotopyType, factor_through_sphere, sphere, wedge
from dynbif.nonlinearity import NonlinearityFamily, bifurcation_values_in
from dynbif.spectral import SpectralDomain

__all__ = [
    "HomotopyType",
    "ZERO",
    "sphere",
    "wedge",
    "factor_through_sphere",
    "Contradiction",
    "IndexProfile",
    "index_profile",
    "essential_test",
    "check_hypotheses",
    "ContinuationResult",
    "continuation_check",
    "find_equilibria",
    "PROXY_LABEL",
]

GAP_FRACTIONS = (0.5, 0.2, 0.35, 0.8)
PROXY_LABEL = "Morse-decomposition proxy"


@dataclass
class IndexProfile:
    window: tuple[float, float]
    upsilon: list[float]
    values: list[HomotopyType]
    samples: list[tuple[float, HomotopyType]] = field(default_factory=list)

    @property
    def gaps(self) -> list[tuple[float, float]]:
        edges = [self.window[0], *self.upsilon, self.window[1]]
        return list(zip(edges[:-1], edges[1:]))

    def value_at(self, lam: float) -> HomotopyType:
        for (lo, hi), v in zip(self.gaps, self.values):
            if lo < lam < hi:
                return v
        raise InvalidArgument(f"lam={lam} is a bifurcation value or outside the profile window")

    def to_dict(self) -> dict:
        return {
            "window": list(self.window),
            "upsilon": list(self.upsilon),
            "gaps": [[lo, hi, str(v)] for (lo, hi), v in zip(self.gaps, self.values)],
        }


def _trivial_index(d, fam, lam) -> HomotopyType:
    eq = newton_solve(d, fam, lam, np.zeros(d.m))
    return conley_index(eq)


def index_profile(
    d: SpectralDomain,
    fam: NonlinearityFamily,
    window: tuple[float, float],
    upsilon: Sequence[float] | None = None,
) -> IndexProfile:
    """Conley index of the trivial equilibrium on each gap between bifurcation values."""
    lo, hi = window
    if not lo < hi:
        raise InvalidArgument("window must satisfy lo < hi")
    ups = sorted(bifurcation_values_in(fam, d, window) if upsilon is None else
                 [g for g in upsilon if lo < g < hi])
    if upsilon is not None and any(g in (lo, hi) for g in upsilon):
        raise InvalidArgument("window endpoints must not be bifurcation values")
    edges = [lo, *ups, hi]
    values, samples = [], []
    for a, b in zip(edges[:-1], edges[1:]):
        seen = []
        for frac in GAP_FRACTIONS:
            lam = a + frac * (b - a)
            try:
                h = _trivial_index(d, fam, lam)
            except NonHyperbolic as exc:
                raise ContinuationViolation(f"trivial state non-hyperbolic at lam={lam} inside gap ({a}, {b})") from exc
            samples.append((lam, h))
            seen.append(h)
        if any(h != seen[0] for h in seen):
            raise ContinuationViolation(
                f"index not constant on gap ({a}, {b}): {[str(h) for h in seen]}; m too small or a missed value"
            )
        values.append(seen[0])
    return IndexProfile(window=(lo, hi), upsilon=list(ups), values=values, samples=samples)


def essential_test(profile: IndexProfile, gamma: float, resolution: float = 1e-6, tol: float = 1e-9) -> str:
    """'essential' if the trivial index differs across gamma, 'inessential' if not, 'undecidable' if not isolated."""
    ups = profile.upsilon
    hits = [i for i, g in enumerate(ups) if abs(g - gamma) <= tol * max(1.0, abs(gamma))]
    if not hits:
        raise InvalidArgument(f"{gamma} is not a bifurcation value of this profile")
    i = hits[0]
    left = ups[i - 1] if i > 0 else profile.window[0]
    right = ups[i + 1] if i + 1 < len(ups) else profile.window[1]
    if gamma - left <= resolution or right - gamma <= resolution:
        return "undecidable"
    return "essential" if profile.values[i] != profile.values[i + 1] else "inessential"


def check_hypotheses(profile: IndexProfile, upsilon: Sequence[float] | None = None, resolution: float = 1e-6) -> dict[str, bool]:
    ups = sorted(profile.upsilon if upsilon is None else upsilon)
    h1 = all(b - a > resolution for a, b in zip(ups[:-1], ups[1:]))
    h2 = all(v.is_sphere for v in profile.values)
    vals = profile.values
    h3 = all(vals[i] != vals[j] for i in range(len(vals)) for j in range(i + 1, len(vals)))
    return {"H1": h1, "H2": h2, "H3": h3}


# --------------------------------------------------------------------------- continuation in a ball


@dataclass
class ContinuationResult:
    constant: bool
    value: HomotopyType | None
    samples: list[tuple[float, HomotopyType, int]]
    violated_at: float | None = None
    label: str = PROXY_LABEL

    def to_dict(self) -> dict:
        return {
            "constant": self.constant,
            "value": None if self.value is None else str(self.value),
            "violated_at": self.violated_at,
            "label": self.label,
            "samples": [[lam, str(h), n] for lam, h, n in self.samples],
        }


def find_equilibria(
    d: SpectralDomain,
    fam: NonlinearityFamily,
    lam: float,
    radius: float,
    rng: np.random.Generator,
    n_random: int = 40,
    guesses: Sequence[np.ndarray] = (),
) -> list[Equilibrium]:
    """Multi-start Newton for equilibria with V-norm up to ``radius``."""
    starts = [np.zeros(d.m), *guesses]
    for j in range(d.m):
        e = np.zeros(d.m)
        e[j] = 1.0 / np.sqrt(d.eigenvalues[j])
        for amp in (0.25, 0.5, 0.75, 1.0, 1.25):
            starts.append(amp * radius * e)
            starts.append(-amp * radius * e)
    dirs = rng.standard_normal((n_random, d.m))
    dirs /= d.v_norm(dirs)[:, None]
    starts.extend(dirs * (radius * rng.uniform(0.1, 1.2, size=n_random))[:, None])
    found: list[Equilibrium] = []
    for g in starts:
        try:
            eq = newton_solve(d, fam, lam, g)
        except NonConvergence:
            continue
        if eq.v_norm > 1.5 * radius:
            continue
        if not any(same_equilibrium(eq.coeffs, f.coeffs) for f in found):
            found.append(eq)
    found.sort(key=lambda e: (e.v_norm, tuple(np.round(e.coeffs, 12))))
    return found


def _track(d, fam, eq: Equilibrium, lam_to: float, substeps: int = 8):
    """Follow an equilibrium to a new lam by natural-parameter Newton steps."""
    a = eq.coeffs
    path = [(eq.lam, eq.v_norm)]
    for lam in np.linspace(eq.lam, lam_to, substeps + 1)[1:]:
        try:
            e = newton_solve(d, fam, lam, a)
        except NonConvergence:
            return None, path
        a = e.coeffs
        path.append((lam, e.v_norm))
    return e, path


def continuation_check(
    d: SpectralDomain,
    fam: NonlinearityFamily,
    interval: tuple[float, float],
    radius: float,
    n_samples: int = 9,
    delta: float | None = None,
    seed: int = 0,
) -> ContinuationResult:
    """Wedge of the indices of all equilibria in the V-ball, checked for constancy in lam.

    Raises IsolationFailure when a bifurcation value lies in the interval, an
    equilibrium sits within ``delta`` of the sphere, or one crosses it between samples.
    """
    a, b = interval
    delta = 0.05 * radius if delta is None else delta
    ups = bifurcation_values_in(fam, d, (a, b)) if a < b else []
    if ups:
        raise IsolationFailure(f"bifurcation value {ups[0]:.12g} in [{a}, {b}]: trivial state not isolated", lam=ups[0])
    rng = np.random.default_rng(seed)
    lams = np.linspace(a, b, n_samples)
    samples: list[tuple[float, HomotopyType, int]] = []
    prev_inside: list[Equilibrium] = []
    for lam in lams:
        guesses = [e.coeffs for e in prev_inside]
        eqs = find_equilibria(d, fam, float(lam), radius + 2 * delta, rng, guesses=guesses)
        for e in eqs:
            if abs(e.v_norm - radius) <= delta:
                raise IsolationFailure(f"equilibrium with V-norm {e.v_norm:.6g} near the ball boundary at lam={lam:.6g}",
                                       lam=float(lam))
        inside = [e for e in eqs if e.v_norm < radius]
        for e in inside:
            if e.margin <= 1e-8:
                raise IsolationFailure(f"non-hyperbolic equilibrium inside the ball at lam={lam:.6g}", lam=float(lam))
        # equilibria that were inside at the previous sample must still be inside, and vice versa
        if samples:
            lam_prev = samples[-1][0]
            for e in prev_inside:
                tracked, path = _track(d, fam, e, float(lam))
                if tracked is not None and tracked.v_norm >= radius:
                    cross = next(l for l, v in path if v >= radius)
                    raise IsolationFailure(f"equilibrium leaves the ball near lam={cross:.6g}", lam=float(cross))
            for e in inside:
                tracked, path = _track(d, fam, e, float(lam_prev))
                if tracked is not None and tracked.v_norm >= radius:
                    cross = next(l for l, v in path if v >= radius)
                    raise IsolationFailure(f"equilibrium enters the ball near lam={cross:.6g}", lam=float(cross))
        value = reduce(wedge, (conley_index(e) for e in inside), ZERO)
        samples.append((float(lam), value, len(inside)))
        prev_inside = inside
    first = samples[0][1]
    for lam, v, _ in samples:
        if v != first:
            return ContinuationResult(False, None, samples, violated_at=lam)
    return ContinuationResult(True, first, samples)
