class BrwError(Exception):
    """Base class for package errors."""


class RegimeError(BrwError, ValueError):
    """The model is outside the drift-to-minus-infinity regime required by an operation."""


class NoRoot(RegimeError):
    def __init__(self, message, attained_min=None):
        super().__init__(message)
        self.attained_min = attained_min


class SpeedDivergence(RegimeError):
    def __init__(self, message, infimum=None):
        super().__init__(message)
        self.infimum = infimum


class DomainError(BrwError, ValueError):
    """An argument is outside the domain where the quantity is defined."""


class OutOfRange(DomainError):
    def __init__(self, message, bounds=None):
        super().__init__(message)
        self.bounds = bounds


class GridMisalignment(BrwError, ValueError):
    pass


class NonConvergence(BrwError, RuntimeError):
    pass


class NodeBudgetExceeded(BrwError, RuntimeError):
    pass
