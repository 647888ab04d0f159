"""Parametric nonlinearities f(lam, s), their bifurcation values and growth checks."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping, Sequence

import numpy as np
from scipy.optimize import brentq, minimize_scalar

from dynbif.errors import (
    HypothesisViolation,
    InvalidArgument,
    OutOfRange,
    Unsupported,
    WindowExhausted,
)
from dynbif.spectral import SpectralDomain, distinct_eigenvalues

__all__ = [
    "Term",
    "ScalarFunction",
    "NonlinearityFamily",
    "PowerLaw",
    "AffineGain",
    "Custom",
    "register_custom",
    "family_from_dict",
    "beta",
    "beta_monotone",
    "bifurcation_values",
    "bifurcation_values_in",
    "F1Result",
    "F2Result",
    "check_f1",
    "check_f2",
    "suggest_mu",
]

ASYMPTOTIC_EXPONENTS = tuple(range(1, 7))


def _abs_power(s, e: float):
    # small integer exponents by repeated multiplication; pow() dominates the flow otherwise
    if float(e).is_integer() and 0 <= e <= 8:
        k = int(e)
        base = s if k % 2 == 0 else np.abs(s)
        out = np.ones_like(s)
        for _ in range(k):
            out = out * base
        return out
    return np.abs(s) ** e


def _signed_power(s, e: float):
    if float(e).is_integer() and 1 <= e <= 9 and int(e) % 2 == 1:
        return _abs_power(s, e - 1.0) * s
    return np.abs(s) ** (e - 1.0) * s


# --------------------------------------------------------------------------- scalar terms


@dataclass(frozen=True)
class Term:
    """One additive piece of a registered scalar function."""

    kind: str            # "power" | "atan" | "tanh"
    coef: float = 1.0
    exponent: float = 1.0

    def __post_init__(self):
        if self.kind not in ("power", "atan", "tanh"):
            raise InvalidArgument(f"unknown term kind {self.kind!r}")
        if self.kind == "power" and self.exponent < 1.0:
            raise InvalidArgument("power terms need exponent >= 1")

    def value(self, s):
        if self.kind == "power":
            return self.coef * _signed_power(s, self.exponent)
        if self.kind == "atan":
            return self.coef * np.arctan(s)
        return self.coef * np.tanh(s)

    def deriv(self, s):
        if self.kind == "power":
            if self.exponent == 1.0:
                return self.coef * np.ones_like(np.asarray(s, dtype=float))
            return self.coef * self.exponent * np.abs(s) ** (self.exponent - 1.0)
        if self.kind == "atan":
            return self.coef / (1.0 + np.asarray(s, dtype=float) ** 2)
        return self.coef / np.cosh(s) ** 2

    def antideriv(self, s):
        s = np.asarray(s, dtype=float)
        if self.kind == "power":
            return self.coef * np.abs(s) ** (self.exponent + 1.0) / (self.exponent + 1.0)
        if self.kind == "atan":
            return self.coef * (s * np.arctan(s) - 0.5 * np.log1p(s * s))
        a = np.abs(s)
        return self.coef * (a + np.log1p(np.exp(-2.0 * a)) - math.log(2.0))

    @property
    def growth(self) -> float:
        return self.exponent if self.kind == "power" else 0.0

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {"kind": self.kind, "coef": float(self.coef)}
        if self.kind == "power":
            out["exponent"] = float(self.exponent)
        return out


@dataclass(frozen=True)
class ScalarFunction:
    terms: tuple[Term, ...]

    @classmethod
    def from_spec(cls, spec) -> "ScalarFunction":
        if isinstance(spec, ScalarFunction):
            return spec
        terms = []
        for t in spec:
            if isinstance(t, Term):
                terms.append(t)
                continue
            extra = set(t) - {"kind", "coef", "exponent"}
            if extra:
                raise InvalidArgument(f"unknown term keys: {sorted(extra)}")
            terms.append(Term(t["kind"], float(t.get("coef", 1.0)), float(t.get("exponent", 1.0))))
        return cls(tuple(terms))

    def __call__(self, s):
        return sum((t.value(s) for t in self.terms), np.zeros_like(np.asarray(s, dtype=float)))

    def deriv(self, s):
        return sum((t.deriv(s) for t in self.terms), np.zeros_like(np.asarray(s, dtype=float)))

    def antideriv(self, s):
        return sum((t.antideriv(s) for t in self.terms), np.zeros_like(np.asarray(s, dtype=float)))

    @property
    def growth(self) -> float:
        return max((t.growth for t in self.terms), default=0.0)

    @property
    def sublinear(self) -> bool:
        return all(t.kind != "power" for t in self.terms)

    def leading_power(self) -> Term | None:
        powers = [t for t in self.terms if t.kind == "power" and t.exponent > 1.0 and t.coef != 0]
        return max(powers, key=lambda t: t.exponent) if powers else None

    def to_list(self) -> list[dict[str, Any]]:
        return [t.to_dict() for t in self.terms]


# --------------------------------------------------------------------------- families


class NonlinearityFamily:
    """Base class. Subclasses provide f, df/ds, F and df/dlam."""

    name = "family"
    p: float = 1.0
    mu: float | None = None

    def f(self, lam: float, s):
        raise NotImplementedError

    def dfds(self, lam: float, s):
        raise NotImplementedError

    def F(self, lam: float, s):
        raise NotImplementedError

    def dfdlam(self, lam: float, s):
        h = 1e-6 * max(1.0, abs(lam))
        return (self.f(lam + h, s) - self.f(lam - h, s)) / (2 * h)

    def to_dict(self) -> dict[str, Any]:
        raise NotImplementedError

    def validate(self, lam_grid=None, s_grid=None, rtol: float = 1e-6) -> None:
        """Check f(lam,0)=0 and the consistency of f, f' and F by finite differences."""
        lam_grid = np.linspace(-10.0, 10.0, 9) if lam_grid is None else np.asarray(lam_grid)
        s_grid = np.linspace(-3.0, 3.0, 14) if s_grid is None else np.asarray(s_grid)
        for lam in lam_grid:
            if abs(float(self.f(lam, np.array(0.0)))) > 1e-14:
                raise InvalidArgument(f"{self.name}: f(lam, 0) != 0 at lam={lam}")
            if abs(float(self.F(lam, np.array(0.0)))) > 1e-14:
                raise InvalidArgument(f"{self.name}: F(lam, 0) != 0 at lam={lam}")
            h = 1e-5 * np.maximum(1.0, np.abs(s_grid))
            fd = (self.f(lam, s_grid + h) - self.f(lam, s_grid - h)) / (2 * h)
            an = self.dfds(lam, s_grid)
            if np.any(np.abs(fd - an) > rtol * np.maximum(1.0, np.abs(an))):
                raise InvalidArgument(f"{self.name}: df/ds inconsistent with f at lam={lam}")
            fdF = (self.F(lam, s_grid + h) - self.F(lam, s_grid - h)) / (2 * h)
            fv = self.f(lam, s_grid)
            if np.any(np.abs(fdF - fv) > rtol * np.maximum(1.0, np.abs(fv))):
                raise InvalidArgument(f"{self.name}: F inconsistent with f at lam={lam}")


@dataclass(eq=False)
class PowerLaw(NonlinearityFamily):
    """f(lam, s) = lam*s + alpha*|s|^(p-1) s + beta_c*|s|^(q-1) s."""

    alpha: float = -1.0
    p: float = 3.0
    beta_c: float = 0.0
    q: float = 2.0
    mu: float | None = None
    name: str = field(default="power_law", init=False)

    def __post_init__(self):
        if self.p < 1 or self.q < 1:
            raise InvalidArgument("exponents p and q must be >= 1")
        self.validate()

    def f(self, lam, s):
        s = np.asarray(s, dtype=float)
        out = lam * s + self.alpha * _signed_power(s, self.p)
        if self.beta_c:
            out = out + self.beta_c * _signed_power(s, self.q)
        return out

    def dfds(self, lam, s):
        s = np.asarray(s, dtype=float)
        out = lam + self.alpha * self.p * _abs_power(s, self.p - 1.0)
        if self.beta_c:
            out = out + self.beta_c * self.q * _abs_power(s, self.q - 1.0)
        return out

    def F(self, lam, s):
        s = np.asarray(s, dtype=float)
        out = 0.5 * lam * s * s + self.alpha * _abs_power(s, self.p + 1.0) / (self.p + 1.0)
        if self.beta_c:
            out = out + self.beta_c * _abs_power(s, self.q + 1.0) / (self.q + 1.0)
        return out

    def dfdlam(self, lam, s):
        return np.asarray(s, dtype=float)

    @property
    def odd(self) -> bool:
        return True

    def to_dict(self):
        out = {"name": "power_law", "alpha": self.alpha, "p": self.p, "beta": self.beta_c, "q": self.q}
        if self.mu is not None:
            out["mu"] = self.mu
        return out


@dataclass(eq=False)
class AffineGain(NonlinearityFamily):
    """f(lam, s) = lam*g(s) + h(s) with g, h built from registered terms."""

    g: ScalarFunction = field(default_factory=lambda: ScalarFunction((Term("power", 1.0, 1.0),)))
    h: ScalarFunction = field(default_factory=lambda: ScalarFunction((Term("power", -1.0, 3.0),)))
    mu: float | None = None
    name: str = field(default="affine_gain", init=False)

    def __post_init__(self):
        self.g = ScalarFunction.from_spec(self.g)
        self.h = ScalarFunction.from_spec(self.h)
        self.validate()

    @property
    def p(self) -> float:  # type: ignore[override]
        return max(1.0, self.g.growth, self.h.growth)

    def f(self, lam, s):
        return lam * self.g(s) + self.h(s)

    def dfds(self, lam, s):
        return lam * self.g.deriv(s) + self.h.deriv(s)

    def F(self, lam, s):
        return lam * self.g.antideriv(s) + self.h.antideriv(s)

    def dfdlam(self, lam, s):
        return self.g(s)

    @property
    def odd(self) -> bool:
        return True

    def to_dict(self):
        out = {"name": "affine_gain", "g": self.g.to_list(), "f": self.h.to_list()}
        if self.mu is not None:
            out["mu"] = self.mu
        return out


@dataclass(eq=False)
class Custom(NonlinearityFamily):
    """Code-level family from three callables of (lam, s)."""

    fn: Callable = None  # type: ignore[assignment]
    dfn: Callable = None  # type: ignore[assignment]
    Fn: Callable = None  # type: ignore[assignment]
    p: float = 1.0
    mu: float | None = None
    name: str = "custom"
    odd: bool = False

    def __post_init__(self):
        if self.fn is None or self.dfn is None or self.Fn is None:
            raise InvalidArgument("custom family needs f, f' and F")
        self.validate()

    def f(self, lam, s):
        return np.asarray(self.fn(lam, np.asarray(s, dtype=float)), dtype=float)

    def dfds(self, lam, s):
        return np.asarray(self.dfn(lam, np.asarray(s, dtype=float)), dtype=float)

    def F(self, lam, s):
        return np.asarray(self.Fn(lam, np.asarray(s, dtype=float)), dtype=float)

    def to_dict(self):
        out = {"name": "custom", "ref": self.name}
        if self.mu is not None:
            out["mu"] = self.mu
        return out


_CUSTOM_REGISTRY: dict[str, Callable[[], Custom]] = {}


def register_custom(name: str, factory: Callable[[], Custom]) -> None:
    _CUSTOM_REGISTRY[name] = factory


def _exp_counterexample() -> Custom:
    # f = lam*s + e^s - 1 - s: beta(lam) = lam but f' = lam + e^s - 1 outgrows every polynomial
    return Custom(
        fn=lambda lam, s: lam * s + np.expm1(s) - s,
        dfn=lambda lam, s: lam + np.expm1(s),
        Fn=lambda lam, s: 0.5 * lam * s * s + np.expm1(s) - s - 0.5 * s * s,
        p=3.0,
        mu=3.0,
        name="exp_counterexample",
    )


register_custom("exp_counterexample", _exp_counterexample)


def family_from_dict(spec: Mapping[str, Any]) -> NonlinearityFamily:
    spec = dict(spec)
    name = spec.pop("name", None)
    if name == "power_law":
        allowed = {"alpha", "p", "beta", "q", "mu"}
        if set(spec) - allowed:
            raise InvalidArgument(f"unknown power_law keys: {sorted(set(spec) - allowed)}")
        return PowerLaw(
            alpha=float(spec.get("alpha", -1.0)),
            p=float(spec.get("p", 3.0)),
            beta_c=float(spec.get("beta", 0.0)),
            q=float(spec.get("q", 2.0)),
            mu=None if spec.get("mu") is None else float(spec["mu"]),
        )
    if name == "affine_gain":
        allowed = {"g", "f", "mu"}
        if set(spec) - allowed:
            raise InvalidArgument(f"unknown affine_gain keys: {sorted(set(spec) - allowed)}")
        return AffineGain(
            g=ScalarFunction.from_spec(spec.get("g", [{"kind": "power", "coef": 1.0, "exponent": 1.0}])),
            h=ScalarFunction.from_spec(spec.get("f", [{"kind": "power", "coef": -1.0, "exponent": 3.0}])),
            mu=None if spec.get("mu") is None else float(spec["mu"]),
        )
    if name == "custom":
        ref = spec.get("ref")
        if ref not in _CUSTOM_REGISTRY:
            raise InvalidArgument(f"no custom family registered as {ref!r}")
        fam = _CUSTOM_REGISTRY[ref]()
        if spec.get("mu") is not None:
            fam.mu = float(spec["mu"])
        return fam
    raise InvalidArgument(f"unknown family {name!r}")


# --------------------------------------------------------------------------- bifurcation values


def beta(fam: NonlinearityFamily, lam: float) -> float:
    return float(fam.dfds(lam, np.array(0.0)))


def beta_monotone(fam: NonlinearityFamily, window: tuple[float, float], n: int = 1000):
    """Return (ok, witness_lam) for strict increase of beta on an n-point grid."""
    lams = np.linspace(window[0], window[1], n)
    b = np.array([beta(fam, lam) for lam in lams])
    bad = np.nonzero(np.diff(b) <= 0)[0]
    if bad.size:
        return False, float(lams[bad[0]])
    return True, None


def _bracket(fam, target: float, window: tuple[float, float] | None):
    if window is not None:
        lo, hi = window
        if not (beta(fam, lo) <= target <= beta(fam, hi)):
            raise WindowExhausted(f"beta does not reach {target} on [{lo}, {hi}]")
        return lo, hi
    lo, hi = -1.0, 1.0
    while beta(fam, hi) < target:
        lo, hi = hi, 2.0 * hi
        if hi > 1e8:
            raise WindowExhausted(f"no bracket for beta = {target} below 1e8")
    while beta(fam, lo) > target:
        hi, lo = lo, 2.0 * lo if lo < 0 else -1.0
        if lo < -1e8:
            raise WindowExhausted(f"no bracket for beta = {target} above -1e8")
    return lo, hi


def _solve_beta(fam, target, window):
    lo, hi = _bracket(fam, target, window)
    ok, witness = beta_monotone(fam, (lo, hi))
    if not ok:
        raise HypothesisViolation(f"beta is not strictly increasing near lam={witness}")
    if beta(fam, lo) == target:
        return lo
    if beta(fam, hi) == target:
        return hi
    return brentq(lambda x: beta(fam, x) - target, lo, hi, xtol=1e-13, rtol=4 * np.finfo(float).eps)


def bifurcation_values(
    fam: NonlinearityFamily,
    d: SpectralDomain,
    K: int,
    window: tuple[float, float] | None = None,
) -> list[float]:
    """First K solutions of beta(gamma) = mu_k, one per distinct eigenvalue."""
    distinct = distinct_eigenvalues(d)
    if K > len(distinct):
        raise OutOfRange(f"requested {K} bifurcation values but truncation has {len(distinct)} distinct eigenvalues")
    if window is not None:
        ok, witness = beta_monotone(fam, window)
        if not ok:
            raise HypothesisViolation(f"beta is not strictly increasing near lam={witness}")
    return [float(_solve_beta(fam, mu, window)) for mu, _ in distinct[:K]]


def bifurcation_values_in(fam: NonlinearityFamily, d: SpectralDomain, window: tuple[float, float]) -> list[float]:
    """All bifurcation values inside ``window``; errors if the truncation cannot cover it."""
    lo, hi = window
    ok, witness = beta_monotone(fam, window)
    if not ok:
        raise HypothesisViolation(f"beta is not strictly increasing near lam={witness}")
    distinct = distinct_eigenvalues(d)
    if beta(fam, hi) >= distinct[-1][0]:
        raise OutOfRange(
            f"beta({hi}) = {beta(fam, hi):.6g} reaches the largest retained eigenvalue "
            f"{distinct[-1][0]:.6g}; increase m"
        )
    out = []
    for mu, _ in distinct:
        if beta(fam, lo) >= mu:
            continue
        if beta(fam, hi) <= mu:
            break
        out.append(float(_solve_beta(fam, mu, window)))
    return out


# --------------------------------------------------------------------------- growth hypotheses


@dataclass
class F1Result:
    passed: bool
    a1: float | None = None
    a2: float | None = None
    slope: float | None = None
    witness: tuple[float, float] | None = None

    def __bool__(self):
        return self.passed

    def to_dict(self):
        return {"passed": self.passed, "a1": self.a1, "a2": self.a2, "slope": self.slope,
                "witness": None if self.witness is None else list(self.witness)}


C_EPS_NOTE = "C_eps is the supremum over the sampled (lam, s) grid and asymptotic points; not a proof"


@dataclass
class F2Result:
    passed: bool
    mu: float
    eps: float
    window: tuple[float, float]
    C_eps: float | None = None
    witness: tuple[float, float] | None = None
    asymptotic: list[float] = field(default_factory=list)
    note: str = C_EPS_NOTE

    def __bool__(self):
        return self.passed

    def to_dict(self):
        return {"passed": self.passed, "mu": self.mu, "eps": self.eps, "window": list(self.window),
                "C_eps": self.C_eps, "witness": None if self.witness is None else list(self.witness),
                "asymptotic": list(self.asymptotic), "note": self.note}


def _asymptotic_s() -> np.ndarray:
    pos = np.array([10.0**k for k in ASYMPTOTIC_EXPONENTS])
    return np.concatenate([-pos[::-1], pos])


def check_f1(
    fam: NonlinearityFamily,
    window: tuple[float, float],
    p: float | None = None,
    s_max: float = 1e3,
    n_s: int = 512,
    n_lam: int = 129,
) -> F1Result:
    """Grid + log-log slope test of |f'(s)| <= a1 + a2 |s|^(p-1)."""
    p = fam.p if p is None else p
    lo, hi = window
    if not (np.isfinite(lo) and np.isfinite(hi)):
        raise InvalidArgument("f1 window must be bounded")
    lams = np.linspace(lo, hi, n_lam)
    s = np.unique(np.concatenate([np.linspace(-s_max, s_max, n_s), np.linspace(-1, 1, 65), _asymptotic_s()]))
    with np.errstate(over="ignore", invalid="ignore"):
        D = np.array([np.abs(fam.dfds(lam, s)) for lam in lams])
    bad = ~np.isfinite(D)
    if bad.any():
        i, j = np.argwhere(bad)[0]
        return F1Result(False, witness=(float(lams[i]), float(s[j])))
    inner = np.abs(s) <= 1.0
    a1 = float(D[:, inner].max())
    outer = s != 0
    with np.errstate(divide="ignore"):
        excess = np.clip(D[:, outer] - a1, 0.0, None) / np.abs(s[outer]) ** (p - 1.0)
    a2 = float(excess.max())
    big = np.array([10.0**k for k in ASYMPTOTIC_EXPONENTS[2:]])
    env = np.array([max(np.abs(fam.dfds(lam, np.array([-x, x]))).max() for lam in lams) for x in big])
    slope = float(np.polyfit(np.log10(big), np.log10(np.maximum(env, 1e-300)), 1)[0])
    if slope > p - 1.0 + 0.05:
        lam_w = float(lams[np.argmax([np.abs(fam.dfds(lam, big[-1])) for lam in lams])])
        return F1Result(False, a1=a1, a2=a2, slope=slope, witness=(lam_w, float(big[-1])))
    return F1Result(True, a1=a1, a2=a2, slope=slope)


def check_f2(
    fam: NonlinearityFamily,
    window: tuple[float, float],
    mu: float,
    eps: float = 1.0,
    s_max: float = 1e3,
    n_s: int = 512,
    n_lam: int = 129,
) -> F2Result:
    """Semi-decide s f >= mu F - eps s^2 - C_eps on a grid plus asymptotic samples."""
    if not mu > 2:
        raise InvalidArgument(f"mu must exceed 2, got {mu}")
    if not eps > 0:
        raise InvalidArgument(f"eps must be positive, got {eps}")
    lo, hi = window
    lams = np.linspace(lo, hi, n_lam)
    s = np.linspace(-s_max, s_max, n_s)

    def supremand(lam, x):
        return mu * fam.F(lam, x) - x * fam.f(lam, x) - eps * x * x

    with np.errstate(over="ignore", invalid="ignore"):
        G = np.array([supremand(lam, s) for lam in lams])
        asym_s = _asymptotic_s()
        A = np.array([supremand(lam, asym_s) for lam in lams])
    if not np.all(np.isfinite(G)) or np.any(np.isnan(A)):
        bad = np.argwhere(~np.isfinite(G))
        i, j = bad[0] if bad.size else np.argwhere(np.isnan(A))[0]
        ss = s if bad.size else asym_s
        return F2Result(False, mu, eps, (lo, hi), witness=(float(lams[i]), float(ss[j])))

    # divergence: the last three asymptotic samples on either side increase and end positive
    n = len(ASYMPTOTIC_EXPONENTS)
    env_neg = A[:, :n][:, ::-1].max(axis=0)
    env_pos = A[:, n:].max(axis=0)
    asym_env = np.maximum(env_neg, env_pos)
    for side, env, sign in (("neg", env_neg, -1.0), ("pos", env_pos, 1.0)):
        tail = env[-3:]
        if np.all(np.diff(tail) > 0) and tail[-1] > 0:
            x = sign * 10.0 ** ASYMPTOTIC_EXPONENTS[-1]
            lam_w = float(lams[np.argmax([supremand(lam, x) for lam in lams])])
            return F2Result(False, mu, eps, (lo, hi), witness=(lam_w, x), asymptotic=asym_env.tolist())
    if np.isposinf(A).any():
        i, j = np.argwhere(np.isposinf(A))[0]
        return F2Result(False, mu, eps, (lo, hi), witness=(float(lams[i]), float(asym_s[j])))

    i, j = np.unravel_index(np.argmax(G), G.shape)
    sup = float(G[i, j])
    a = s[max(j - 1, 0)]
    b = s[min(j + 1, s.size - 1)]
    if b > a:
        res = minimize_scalar(lambda x: -supremand(lams[i], x), bounds=(a, b), method="bounded",
                              options={"xatol": 1e-10})
        sup = max(sup, float(-res.fun))
    finite_asym = A[np.isfinite(A)]
    sup = max(sup, float(finite_asym.max()) if finite_asym.size else sup)
    return F2Result(True, mu, eps, (lo, hi), C_eps=max(0.0, sup), asymptotic=asym_env.tolist())


def _mu_for_leading(coef: float, p: float) -> float:
    if coef > 0:
        return (2.0 + (p + 1.0)) / 2.0
    return p + 2.0


def suggest_mu(fam: NonlinearityFamily) -> float:
    """Pick mu > 2 for the superquadraticity check from the leading power term."""
    if isinstance(fam, PowerLaw):
        if fam.alpha == 0 or fam.p <= 1:
            raise Unsupported("power_law without a superlinear leading term has no admissible mu rule")
        return _mu_for_leading(fam.alpha, fam.p)
    if isinstance(fam, AffineGain):
        if not fam.g.sublinear:
            raise Unsupported("affine_gain needs a sublinear gain g for the composition rule")
        if fam.mu is not None:
            return float(fam.mu)
        lead = fam.h.leading_power()
        if lead is None:
            raise Unsupported("affine_gain base part has no superlinear power term")
        return _mu_for_leading(lead.coef, lead.exponent)
    if fam.mu is not None:
        return float(fam.mu)
    raise Unsupported(f"family {fam.name!r} declares no mu")
