"""Dirichlet Laplacian eigenbasis on intervals and rectangles.

Basis functions are orthonormal in L2 (the mass matrix is the identity), so a
state ``a`` has ``|u|^2 = sum(a**2)`` and ``||u||^2 = sum(mu * a**2)``.
Quadrature is the composite trapezoidal rule on interior nodes; the boundary
nodes carry zero for every Dirichlet mode and are dropped.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Mapping

import numpy as np

from dynbif.errors import InvalidArgument, OutOfRange

__all__ = [
    "Interval",
    "Rectangle",
    "SpectralDomain",
    "build_domain",
    "distinct_eigenvalue",
    "distinct_eigenvalues",
    "synthesize",
    "project",
    "tail_norms",
]

DEFAULT_P_MAX = 5


@dataclass(frozen=True)
class Interval:
    length: float = math.pi

    def to_dict(self) -> dict[str, Any]:
        return {"kind": "interval", "length": float(self.length)}


@dataclass(frozen=True)
class Rectangle:
    lx: float = math.pi
    ly: float = math.pi

    def to_dict(self) -> dict[str, Any]:
        return {"kind": "rectangle", "lx": float(self.lx), "ly": float(self.ly)}


def parse_domain_spec(spec: Interval | Rectangle | Mapping[str, Any]) -> Interval | Rectangle:
    if isinstance(spec, (Interval, Rectangle)):
        return spec
    if not isinstance(spec, Mapping):
        raise InvalidArgument(f"unrecognised domain descriptor {spec!r}")
    kind = spec.get("kind")
    if kind == "interval":
        extra = set(spec) - {"kind", "length"}
        if extra:
            raise InvalidArgument(f"unknown interval keys: {sorted(extra)}")
        return Interval(float(spec.get("length", math.pi)))
    if kind == "rectangle":
        extra = set(spec) - {"kind", "lx", "ly"}
        if extra:
            raise InvalidArgument(f"unknown rectangle keys: {sorted(extra)}")
        return Rectangle(float(spec.get("lx", math.pi)), float(spec.get("ly", math.pi)))
    raise InvalidArgument(f"domain kind must be 'interval' or 'rectangle', got {kind!r}")


@dataclass(frozen=True, eq=False)
class SpectralDomain:
    """Truncated eigenbasis plus the quadrature grid it is evaluated on."""

    spec: Interval | Rectangle
    eigenvalues: np.ndarray          # (m,), ascending
    indices: tuple[tuple[int, ...], ...]
    n_intervals: tuple[int, ...]     # quadrature intervals per axis
    nodes: np.ndarray                # (n_nodes, dim)
    weights: np.ndarray              # (n_nodes,)
    basis: np.ndarray                # (n_nodes, m) values of phi_j at nodes
    p_max: int = DEFAULT_P_MAX
    grid_shape: tuple[int, ...] = field(default=())

    @property
    def m(self) -> int:
        return int(self.eigenvalues.size)

    @property
    def kind(self) -> str:
        return "interval" if isinstance(self.spec, Interval) else "rectangle"

    @property
    def measure(self) -> float:
        if isinstance(self.spec, Interval):
            return float(self.spec.length)
        return float(self.spec.lx * self.spec.ly)

    @property
    def mu1(self) -> float:
        return float(self.eigenvalues[0])

    # flat-grid helpers used by the solvers; they accept stacked coefficients (..., m)
    def to_grid(self, coeffs: np.ndarray) -> np.ndarray:
        return np.asarray(coeffs) @ self.basis.T

    def from_grid(self, values: np.ndarray) -> np.ndarray:
        return (np.asarray(values) * self.weights) @ self.basis

    def h_norm(self, coeffs: np.ndarray) -> np.ndarray:
        return np.sqrt(np.sum(np.asarray(coeffs) ** 2, axis=-1))

    def v_norm(self, coeffs: np.ndarray) -> np.ndarray:
        return np.sqrt(np.sum(self.eigenvalues * np.asarray(coeffs) ** 2, axis=-1))

    def describe(self) -> dict[str, Any]:
        return {**self.spec.to_dict(), "m": self.m, "p_max": self.p_max}


def _sine_values(k: int, length: float, x: np.ndarray) -> np.ndarray:
    return math.sqrt(2.0 / length) * np.sin(k * math.pi * x / length)


def build_domain(
    spec: Interval | Rectangle | Mapping[str, Any],
    m: int,
    p_max: int = DEFAULT_P_MAX,
) -> SpectralDomain:
    """Keep the ``m`` lowest Dirichlet modes of ``spec``.

    Rectangle ties are broken by lexicographic ``(j, k)`` order. Each axis gets
    ``2 * (p_max + 1) * K`` trapezoid intervals, K being the largest retained
    index on that axis; that integrates products of up to ``p_max + 1`` modes
    exactly whenever the product has even parity (odd nonlinearities).
    """
    spec = parse_domain_spec(spec)
    if not isinstance(m, (int, np.integer)) or m < 1:
        raise InvalidArgument(f"truncation m must be a positive integer, got {m!r}")
    if p_max < 1:
        raise InvalidArgument("p_max must be >= 1")
    m = int(m)
    factor = 2 * (p_max + 1)

    if isinstance(spec, Interval):
        L = spec.length
        if not L > 0:
            raise InvalidArgument(f"interval length must be positive, got {L}")
        ks = np.arange(1, m + 1)
        eig = (ks * math.pi / L) ** 2
        n = factor * m
        x = np.arange(1, n) * (L / n)
        basis = np.column_stack([_sine_values(int(k), L, x) for k in ks])
        weights = np.full(x.size, L / n)
        return SpectralDomain(
            spec=spec,
            eigenvalues=eig.astype(float),
            indices=tuple((int(k),) for k in ks),
            n_intervals=(n,),
            nodes=x[:, None],
            weights=weights,
            basis=basis,
            p_max=p_max,
            grid_shape=(n - 1,),
        )

    lx, ly = spec.lx, spec.ly
    if not (lx > 0 and ly > 0):
        raise InvalidArgument(f"rectangle sides must be positive, got {lx}, {ly}")
    cand = [
        (((j * math.pi / lx) ** 2 + (k * math.pi / ly) ** 2), j, k)
        for j in range(1, m + 1)
        for k in range(1, m + 1)
    ]
    cand.sort()
    chosen = cand[:m]
    kx = max(c[1] for c in chosen)
    ky = max(c[2] for c in chosen)
    nx, ny = factor * kx, factor * ky
    x = np.arange(1, nx) * (lx / nx)
    y = np.arange(1, ny) * (ly / ny)
    X, Y = np.meshgrid(x, y, indexing="ij")
    xs, ys = X.ravel(), Y.ravel()
    basis = np.column_stack(
        [_sine_values(j, lx, xs) * _sine_values(k, ly, ys) for _, j, k in chosen]
    )
    weights = np.full(xs.size, (lx / nx) * (ly / ny))
    return SpectralDomain(
        spec=spec,
        eigenvalues=np.array([c[0] for c in chosen], dtype=float),
        indices=tuple((c[1], c[2]) for c in chosen),
        n_intervals=(nx, ny),
        nodes=np.column_stack([xs, ys]),
        weights=weights,
        basis=basis,
        p_max=p_max,
        grid_shape=(nx - 1, ny - 1),
    )


def distinct_eigenvalues(d: SpectralDomain, rtol: float = 1e-12) -> list[tuple[float, int]]:
    """Distinct eigenvalues in the truncation with their multiplicities."""
    out: list[tuple[float, int]] = []
    for mu in d.eigenvalues:
        if out and abs(mu - out[-1][0]) <= rtol * max(1.0, mu):
            out[-1] = (out[-1][0], out[-1][1] + 1)
        else:
            out.append((float(mu), 1))
    return out


def distinct_eigenvalue(d: SpectralDomain, k: int) -> tuple[float, int]:
    vals = distinct_eigenvalues(d)
    if k < 1 or k > len(vals):
        raise OutOfRange(f"distinct eigenvalue {k} outside truncation ({len(vals)} available)")
    return vals[k - 1]


def synthesize(d: SpectralDomain, coeffs) -> np.ndarray:
    a = np.asarray(coeffs, dtype=float)
    if a.shape != (d.m,):
        raise InvalidArgument(f"expected {d.m} coefficients, got shape {a.shape}")
    return d.to_grid(a).reshape(d.grid_shape)


def project(d: SpectralDomain, w) -> np.ndarray:
    """L2 inner products of grid samples with every basis function."""
    w = np.asarray(w, dtype=float)
    if w.size != d.weights.size or (w.ndim > 1 and w.shape != d.grid_shape):
        raise InvalidArgument(f"samples of shape {w.shape} do not match grid {d.grid_shape}")
    return d.from_grid(w.ravel())


def tail_norms(d: SpectralDomain, coeffs, m0: int) -> tuple[float, float]:
    a = np.asarray(coeffs, dtype=float)
    if a.shape != (d.m,):
        raise InvalidArgument(f"expected {d.m} coefficients, got shape {a.shape}")
    if not 0 <= m0 <= d.m:
        raise InvalidArgument(f"m0={m0} outside [0, {d.m}]")
    tail = a[m0:]
    return float(np.sum(tail**2)), float(np.sum(d.eigenvalues[m0:] * tail**2))
