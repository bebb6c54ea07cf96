"""Exception hierarchy shared across the package."""


class SpTuckerError(Exception):
    """Base class for all package errors."""


class DomainError(SpTuckerError, ValueError):
    """Argument outside its valid domain (coordinate, mode, fraction, ...)."""


class ParseError(SpTuckerError, ValueError):
    """Malformed line in a delimited tensor file."""

    def __init__(self, message, line_number=None):
        self.line_number = line_number
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)


class DataError(SpTuckerError, ValueError):
    """Well-formed input that violates tensor invariants (duplicates, zeros, ...)."""


class EmptyTensorError(DataError):
    pass


class DegenerateSplitError(DataError):
    pass


class ModelFormatError(SpTuckerError, ValueError):
    """Unreadable or inconsistent serialized model."""


class InvariantError(SpTuckerError, ValueError):
    """Parameters that break a structural invariant (e.g. R_core > min J)."""


class NumericalDivergence(SpTuckerError, FloatingPointError):
    """A parameter update produced non-finite values."""


class ConfigError(SpTuckerError, ValueError):
    pass
