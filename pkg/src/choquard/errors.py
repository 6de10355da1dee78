"""Exception and warning types raised across the package."""


class ChoquardError(Exception):
    """Base class for all package errors."""


class SpecError(ChoquardError, ValueError):
    """A problem specification is malformed or inadmissible."""


class NonDescendingBeta(SpecError):
    pass


class BadDimensionOrderPair(SpecError):
    pass


class NegativeCoupling(SpecError):
    pass


class UnboundedBelowConfinement(SpecError):
    pass


class ConfigParseError(SpecError):
    pass


class OutOfMemoryBudget(ChoquardError, MemoryError):
    pass


class DomainError(ChoquardError, ValueError):
    pass


class UnsupportedRadialFractional(ChoquardError, NotImplementedError):
    pass


class NegativeDensity(ChoquardError, ValueError):
    pass


class SupportViolation(ChoquardError, ValueError):
    pass


class SupportOverflow(ChoquardError, ValueError):
    pass


class GridMismatch(ChoquardError, ValueError):
    pass


class LengthMismatch(ChoquardError, ValueError):
    pass


class NonOrthonormalFrame(ChoquardError, ValueError):
    pass


class InvalidBracket(ChoquardError, ValueError):
    pass


class MassExceedsOne(ChoquardError, ValueError):
    pass


class NoConvergence(ChoquardError, RuntimeError):
    """An inner iterative solver failed to reach its tolerance."""

    def __init__(self, message, residuals=None):
        super().__init__(message)
        self.residuals = residuals


class NoDecayingSolution(ChoquardError, RuntimeError):
    pass


class IterationCapExceeded(ChoquardError, RuntimeError):
    pass


class ResourceCap(ChoquardError, RuntimeError):
    pass


class CheckpointError(ChoquardError):
    pass


class VersionMismatch(CheckpointError):
    pass


class SpecHashMismatch(CheckpointError):
    pass


class DegenerateCrossingAtK(UserWarning):
    """The k-th and (k+1)-th eigenvalues coincide within tolerance."""


class TooManyBoundStates(UserWarning):
    """Bound-state enumeration hit its cap; the reported sum is a lower bound."""
