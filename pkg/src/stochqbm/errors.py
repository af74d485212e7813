"""Exception hierarchy shared by all modules."""


class QBMError(Exception):
    """Base class for library errors."""


class InvalidArgumentError(QBMError, ValueError):
    pass


class NumericalFailureError(QBMError, ArithmeticError):
    """A numerical routine did not converge; ``residual`` holds the worst error seen."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class DegenerateBoundaryError(QBMError, ArithmeticError):
    """The boundary-value solve at ``time`` is singular (a caustic)."""

    def __init__(self, message, time=None, index=None):
        super().__init__(message)
        self.time = time
        self.index = index


class IndefiniteCovarianceError(QBMError, ArithmeticError):
    pass


class IntegrationFailureError(QBMError, ArithmeticError):
    def __init__(self, message, time=None):
        super().__init__(message)
        self.time = time


class InsufficientSamplesError(QBMError, ValueError):
    pass


class InvalidStateError(QBMError, RuntimeError):
    pass


class UnsupportedDistributionError(QBMError, ValueError):
    pass


class ConfigurationError(QBMError, ValueError):
    pass


class BoundaryLeakError(QBMError, ArithmeticError):
    pass


class InvalidComparisonError(QBMError, ValueError):
    pass
