"""Exception types shared across the package."""


class FeatallocError(Exception):
    """Base class for all package errors."""


class ValidationError(FeatallocError, ValueError):
    """Invalid input data, parameters or configuration."""


class NumericalError(FeatallocError, ArithmeticError):
    """An internal numerical fault (e.g. a non positive-definite matrix)."""
