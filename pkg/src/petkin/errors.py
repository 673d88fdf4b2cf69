"""Exception types shared across the package."""


class PetkinError(Exception):
    """Base class for all petkin errors."""


class ValidationError(PetkinError, ValueError):
    """Invalid input data, configuration, or file contents."""


class NumericError(PetkinError, ArithmeticError):
    """Numerical failure: degenerate kernel, singular system, or broken descent."""
