"""Exception hierarchy shared across the toolkit."""


class EmulatorError(Exception):
    """Base class for all toolkit errors."""


class InvalidParameterError(EmulatorError, ValueError):
    """A parameter violates its domain (nonpositive range, bad shape, ...)."""


class ConditioningError(EmulatorError, ArithmeticError):
    """A matrix factorization failed or a computation lost numerical validity."""


class DataValidationError(EmulatorError, ValueError):
    """Input data violates a structural contract (nesting, shapes, files)."""


class ConfigError(EmulatorError, ValueError):
    """A run configuration is malformed or inconsistent."""
