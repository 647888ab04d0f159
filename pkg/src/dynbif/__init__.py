"""Spectral-Galerkin toolkit for global dynamic bifurcation of -Lap u = f(u, lam)."""
from __future__ import annotations

__version__ = "0.1.0"

from dynbif.errors import (  # noqa: E402
    ContinuationViolation,
    DynBifError,
    IntegrationFailure,
    InvalidArgument,
    IsolationFailure,
    NonConvergence,
    NonHyperbolic,
    OutOfRange,
    Unsupported,
)
from dynbif.spectral import Interval, Rectangle, SpectralDomain, build_domain  # noqa: E402
from dynbif.nonlinearity import AffineGain, Custom, PowerLaw, family_from_dict  # noqa: E402

__all__ = [
    "__version__",
    "DynBifError",
    "InvalidArgument",
    "OutOfRange",
    "NonConvergence",
    "NonHyperbolic",
    "IsolationFailure",
    "ContinuationViolation",
    "IntegrationFailure",
    "Unsupported",
    "Interval",
    "Rectangle",
    "SpectralDomain",
    "build_domain",
    "PowerLaw",
    "AffineGain",
    "Custom",
    "family_from_dict",
]
