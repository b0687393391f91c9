"""Exception types shared across the package."""

from __future__ import annotations


class PolalignError(Exception):
    """Base class for all package-specific errors."""


class InsufficientCountsError(PolalignError):
    """Raised when detection counts cannot support a reconstruction.

    Attributes
    ----------
    basis : str or None
        Name of the measurement basis ("Z", "X", "Y") that has no counts,
        when the failure is basis-specific.
    where : str or None
        Human-readable location of the offending data (e.g. an input-state
        row or an outcome column).
    """

    def __init__(self, message: str, *, basis: str | None = None, where: str | None = None):
        super().__init__(message)
        self.basis = basis
        self.where = where


class MLEConvergenceError(PolalignError):
    """Raised when the likelihood maximization hits its iteration cap.

    Carries the best iterate so callers can still act on it.
    """

    def __init__(self, message: str, *, best, likelihood_delta: float):
        super().__init__(message)
        self.best = best
        self.likelihood_delta = likelihood_delta


class FitError(PolalignError):
    """Raised when a power-law fit is impossible.

    Attributes
    ----------
    regressor : str or None
        Name of the degenerate regressor ("n" or "fs"), if that is the cause.
    """

    def __init__(self, message: str, *, regressor: str | None = None):
        super().__init__(message)
        self.regressor = regressor


class SweepError(PolalignError):
    """Raised when a sweep cell exceeds the tolerated trial-failure rate."""


class SchemaError(PolalignError):
    """Raised when a count file does not match the expected schema."""
