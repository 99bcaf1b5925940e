"""Exception types shared across the package."""

from __future__ import annotations


class SomaError(Exception):
    """Base class for all package errors."""


class DimensionMismatchError(SomaError):
    pass


class DuplicateEntryError(SomaError):
    pass


class UnknownEntryError(SomaError):
    pass


class SchemaViolationError(SomaError):
    """Structural validation failure; carries the offending field path."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field
        self.message = message


class UnsupportedSchemaVersionError(SomaError):
    pass


class CorruptRecordError(SomaError):
    """A persisted record could not be decoded; carries its 1-based line number."""

    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


class StoreIOError(SomaError):
    pass


class GrammarError(SomaError):
    pass


class MaskBoundsError(SomaError):
    pass


class MaskOverlapsTargetError(SomaError):
    pass


class UnknownDistractorError(SomaError):
    pass


class HorizonBudgetError(SomaError):
    pass


class UnparameterizableError(SomaError):
    """A selected tool has no valid parameters for this context; it is dropped."""


class EmptyTrajectoryError(SomaError):
    pass


class UnknownToolError(SomaError):
    pass


class InvalidParamsError(SchemaViolationError):
    """Protocol-level argument rejection (JSON-RPC error -32602)."""


class RemoteUnreachableError(SomaError):
    pass


class UnsatisfiableSpecError(SomaError):
    pass


class InvalidActionError(SomaError):
    pass
