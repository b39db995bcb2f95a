"""Exception hierarchy.

Everything a caller can fix by changing the inputs derives from
:class:`ValidationError` (CLI exit code 2); failures of the numerics on
otherwise valid input raise :class:`NumericalError` (exit code 3).
"""


class XferScoreError(Exception):
    """Base class for all package errors."""


class ValidationError(XferScoreError, ValueError):
    """Input violates a documented invariant."""


class ParseError(ValidationError):
    """A file could not be parsed under its declared format."""


class MissingFieldError(ValidationError):
    """A required manifest column or value is absent."""


class DegenerateInputError(ValidationError):
    """Input is well-formed but the quantity is undefined for it (too few samples, one class, ...)."""


class DimensionError(ValidationError):
    """Incompatible dimensions."""


class SpecError(ValidationError):
    """Invalid synthetic-data specification."""


class InsufficientDataError(ValidationError):
    """Not enough samples to satisfy a sampling request."""


class NumericalError(XferScoreError, ArithmeticError):
    """A factorization failed or produced non-finite values."""


class ConvergenceWarning(UserWarning):
    """An iterative fit stopped at its iteration cap."""
