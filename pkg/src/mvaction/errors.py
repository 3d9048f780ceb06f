"""Exception hierarchy shared across the toolkit.

The CLI maps these onto exit codes: validation-type errors, I/O errors and
numeric failures each get their own code.
"""


class ValidationError(ValueError):
    """Input violates a documented precondition or invariant."""


class ParseError(ValidationError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class StructuralError(ValidationError):
    pass


class PairingError(ValidationError):
    pass


class AlignmentError(ValidationError):
    pass


class DataError(ValidationError):
    pass


class ConfigError(ValidationError):
    pass


class ShapeError(ValidationError):
    pass


class DegenerateInputError(ValidationError):
    pass


class RangeError(ValidationError):
    pass


class NumericError(ArithmeticError):
    """Non-finite values or a degenerate numeric state."""


class ContractViolation(RuntimeError):
    pass
