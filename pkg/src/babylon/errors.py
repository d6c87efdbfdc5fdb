"""Exception types shared across the package."""


class ValidationError(ValueError):
    """Input data violates a structural invariant (symmetry, zero diagonal, ...)."""


class CouplingParseError(ValidationError):
    """A coupling or tensor file could not be parsed."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class EnumerationCapError(ValueError):
    """Exact enumeration was requested for more spins than the configured cap."""


class NumericalError(ArithmeticError):
    """A computation produced a non-finite or degenerate result."""


class NotPSDError(NumericalError):
    """A covariance matrix has an eigenvalue below the PSD tolerance."""
