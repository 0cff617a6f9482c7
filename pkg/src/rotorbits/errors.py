"""Exception types raised across the package."""


class RotorbitsError(Exception):
    pass


class DimensionError(RotorbitsError, ValueError):
    pass


class ValidationError(RotorbitsError, ValueError):
    """A matrix or problem failed a structural check.

    ``defects`` carries the measured values that caused the failure.
    """

    def __init__(self, message, **defects):
        super().__init__(message)
        self.defects = defects


class InconsistencyError(ValidationError):
    pass


class AliasingError(RotorbitsError, ValueError):
    pass


class GridMismatchError(RotorbitsError, ValueError):
    pass


class DomainError(RotorbitsError, ValueError):
    pass


class ConvexityError(RotorbitsError, ValueError):
    pass


class UnboundedSurfaceError(RotorbitsError, ValueError):
    pass


class InfeasibleError(RotorbitsError, ValueError):
    pass


class ContractError(RotorbitsError, ValueError):
    pass


class NumericalError(RotorbitsError, RuntimeError):
    """Iterative method failed; ``best`` holds the best iterate found."""

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class StalledError(NumericalError):
    pass
