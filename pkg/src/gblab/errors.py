"""Exception types shared across the package."""


class GblabError(Exception):
    """Base class for package errors."""


class DimensionMismatchError(GblabError):
    """Operands live in exterior algebras of different dimension."""


class InvariantViolationError(GblabError):
    """A constructed value violates one of its declared invariants."""


class ChartDomainError(GblabError):
    """A point left the valid region of a model's chart."""


class SeriesConvergenceError(GblabError):
    """An eigenfunction series cannot reach the requested accuracy.

    Carries ``required_terms``, the estimated number of modes that the
    truncated series would need.
    """

    def __init__(self, message, required_terms=None):
        super().__init__(message)
        self.required_terms = required_terms


class NumericalAbortError(GblabError):
    """A Monte Carlo run breached one of its numerical guard rails."""


class ResampleRateError(NumericalAbortError):
    """Too many sampled paths had to be discarded.

    Carries ``rate``, the observed fraction of discarded paths.
    """

    def __init__(self, message, rate=None):
        super().__init__(message)
        self.rate = rate


class CalibrationRankError(GblabError):
    """The calibration design matrix does not determine all constants."""


class ConfigError(GblabError):
    """A run configuration is malformed or incomplete."""
