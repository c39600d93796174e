"""Domain errors.

Each class name doubles as the error name the CLI prints, so callers can
match on ``type(err).__name__``.
"""


class FixSmoothError(Exception):
    """Base class for all domain errors raised by this package."""


class NonPositiveLRV(FixSmoothError):
    pass


class FactorizationFailure(FixSmoothError):
    pass


class NonFinite(FixSmoothError):
    pass


class NotPSD(FixSmoothError):
    pass


class TruncationTooCoarse(FixSmoothError):
    pass


class UnequalGroups(FixSmoothError):
    pass


class ZeroVariance(FixSmoothError):
    pass


class DegenerateLRV(FixSmoothError):
    pass


class TooManyDegenerate(FixSmoothError):
    """More than the allowed share of bootstrap replications had to be redrawn."""
