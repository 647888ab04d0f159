"""Exception hierarchy shared by all modules."""
from __future__ import annotations


class DynBifError(Exception):
    """Base class for every error raised by dynbif."""


class InvalidArgument(DynBifError, ValueError):
    pass


class OutOfRange(DynBifError, IndexError):
    pass


class HypothesisViolation(DynBifError):
    pass


class WindowExhausted(DynBifError):
    pass


class Unsupported(DynBifError):
    pass


class IntegrationFailure(DynBifError):
    pass


class NonHyperbolic(DynBifError):
    pass


class PreconditionViolation(DynBifError):
    pass


class ContinuationViolation(DynBifError):
    pass


class IsolationFailure(DynBifError):
    def __init__(self, message: str, lam: float | None = None):
        super().__init__(message)
        self.lam = lam


class NonConvergence(DynBifError):
    """Newton failed; ``best`` carries the best iterate seen."""

    def __init__(self, message: str, best=None):
        super().__init__(message)
        self.best = best
