"""Exception types shared across the package."""


class IsoError(Exception):
    """Base class for all package errors."""


class DimensionError(IsoError, ValueError):
    pass


class UsageError(IsoError, RuntimeError):
    pass


class NumericalError(IsoError, ArithmeticError):
    def __init__(self, message: str, iterations: int | None = None):
        super().__init__(message)
        self.iterations = iterations


class ConfigError(IsoError, ValueError):
    pass


class DomainError(IsoError, ValueError):
    pass


class InputError(IsoError, ValueError):
    def __init__(self, message: str, files=()):
        super().__init__(message)
        self.files = list(files)
