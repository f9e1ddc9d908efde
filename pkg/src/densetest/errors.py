"""Exception types shared across the package."""


class DensetestError(Exception):
    """Base class for all densetest errors."""


class InvalidStructureError(DensetestError):
    """A matrix does not have the block structure an operation requires."""


class NotPositiveDefiniteError(DensetestError):
    """A matrix that must be positive definite is not."""


class FactorizationError(DensetestError):
    """A matrix factorization (Cholesky, triangular solve) failed."""


class DomainError(DensetestError):
    """Inputs fall outside the domain where a closed form is defined."""


class InvalidRegimeError(DensetestError):
    """Inputs violate the (n, p, s) regime preconditions of an operation."""


class PipelineError(DensetestError):
    """The inference pipeline could not produce an estimate.

    Carries the offending solver report (when one exists) so callers can
    inspect what went wrong and decide on a fallback.
    """

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report
