"""Exception types raised across the package."""


class PointerReaderError(Exception):
    """Base class for all package errors."""


class MalformedInputError(PointerReaderError, ValueError):
    """Raw annotations or records that cannot be turned into events."""


class CorpusParseError(MalformedInputError):
    """A corpus or instance file line that violates the schema."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ValidationError(CorpusParseError):
    """A syntactically valid record that breaks a data invariant."""


class DimensionError(PointerReaderError, ValueError):
    """Operand shapes do not agree."""


class ContractViolation(PointerReaderError, ValueError):
    """A precondition of an operation does not hold."""


class InstanceSkip(ContractViolation):
    """An instance that cannot be used by the model (e.g. no candidates)."""
