"""Exception hierarchy shared by all modules."""


class MFGError(Exception):
    """Base class for every error raised by jumpmfg."""


class ModelError(MFGError, ValueError):
    """A model specification is structurally invalid."""


class ModelSyntaxError(ModelError):
    """Malformed model text or expression; carries a 1-based position."""

    def __init__(self, message, line=1, column=1, expected=()):
        self.line = line
        self.column = column
        self.expected = tuple(expected)
        detail = f"line {line}, column {column}: {message}"
        if self.expected:
            detail += f" (expected {', '.join(self.expected)})"
        super().__init__(detail)


class ModelSemanticError(ModelSyntaxError):
    """Well-formed text that refers to unknown variables, wrong sizes, duplicates."""


class EvaluationError(MFGError, ArithmeticError):
    """An expression produced a non-finite or disallowed value."""


class DomainError(MFGError, ValueError):
    """An argument lies outside the domain of an operation."""


class UsageError(MFGError, ValueError):
    """An operation was called in a way its contract forbids."""


class IntegrationInstabilityError(MFGError, ArithmeticError):
    """A probability or simplex entry went clearly negative during integration."""


class BlowUpError(MFGError, ArithmeticError):
    """The backward value integration produced non-finite values."""


class CapacityError(MFGError, MemoryError):
    """An enumerated state space exceeds the configured capacity."""
