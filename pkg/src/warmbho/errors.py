"""Exception types raised across the package."""


class WarmBHOError(Exception):
    """Base class for all package errors."""


class DimensionMismatchError(WarmBHOError, ValueError):
    pass


class DomainError(WarmBHOError, ValueError):
    pass


class UnsupportedDimensionError(WarmBHOError, ValueError):
    pass


class DataError(WarmBHOError, ValueError):
    """Non-finite or otherwise unusable observations."""


class NumericalError(WarmBHOError, ArithmeticError):
    """Cholesky factorization failed even after the full jitter ladder."""


class UnknownRecordError(WarmBHOError, KeyError):
    pass


class UndefinedCCoVError(WarmBHOError, ValueError):
    pass


class DegenerateDimensionError(WarmBHOError, ValueError):
    pass


class MissingMetaFeaturesError(WarmBHOError, ValueError):
    pass


class StoreParseError(WarmBHOError, ValueError):
    pass


class DivergenceError(WarmBHOError, ArithmeticError):
    def __init__(self, iteration, loss):
        super().__init__(f"non-finite training loss {loss!r} at iteration {iteration}")
        self.iteration = iteration
        self.loss = loss


class TargetEvaluationError(WarmBHOError, RuntimeError):
    """The target returned a non-finite value; ``trace`` holds what ran."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace
