"""Exception types shared across the engine."""

from __future__ import annotations


class SteptreeError(Exception):
    """Base class for all engine errors."""


# --- problem model ---------------------------------------------------------


class ParseError(SteptreeError):
    """Problem file is not valid interchange JSON."""


class ValidationError(SteptreeError):
    """A loaded value violates a domain invariant; names the offending field."""

    def __init__(self, field: str, message: str = ""):
        self.field = field
        super().__init__(f"{field}: {message}" if message else field)


class EmptyPlanError(SteptreeError):
    """A plan text contains no nonempty step segment."""


# --- embedding -------------------------------------------------------------


class EmbedderUnavailable(SteptreeError):
    """Remote embedding backend unreachable; caller may retry or abort."""


class DimensionMismatch(SteptreeError):
    pass


class ZeroVector(SteptreeError):
    pass


# --- knowledge base --------------------------------------------------------


class EmptyStepsError(SteptreeError):
    pass


class UnknownCategoryError(SteptreeError):
    pass


class SchemaVersionError(SteptreeError):
    """KB file header declares an unsupported version or inconsistent dim."""


class KBIOError(SteptreeError):
    """KB file unreadable or truncated; carries the failing byte offset."""

    def __init__(self, message: str, byte_offset: int | None = None):
        self.byte_offset = byte_offset
        if byte_offset is not None:
            message = f"{message} (byte offset {byte_offset})"
        super().__init__(message)


# --- llm gateway -----------------------------------------------------------


class BackendError(SteptreeError):
    """Transport or auth failure talking to the model backend."""


class EmptyCompletionError(SteptreeError):
    pass


class PrefixViolationError(SteptreeError):
    """Completed plan does not extend the requested step prefix."""


class NoCodeBlockError(SteptreeError):
    """Reply contains no usable code defining the required entry point."""


class ScoreParseError(SteptreeError):
    """Evaluator reply contains no score in the declared format."""


class LocalizationParseError(SteptreeError):
    """Localizer reply contains no step index in the declared format."""


class MockScriptMissError(BackendError):
    """Scripted mock received a request with no matching script entry."""


# --- sandbox ---------------------------------------------------------------


class SandboxSetupError(SteptreeError):
    """Harness missing or interpreter absent; distinct from candidate failure."""


# --- search engine ---------------------------------------------------------


class ExpansionEmptyError(SteptreeError):
    """Gateway returned zero step candidates during expansion."""


class GraftConflictError(SteptreeError):
    """An identical-text child already exists at a graft point."""


class NoSimulatedLeafError(SteptreeError):
    pass


class ConfigError(SteptreeError):
    pass


# --- bench harness ---------------------------------------------------------


class EmptyDatasetError(SteptreeError):
    pass


class MismatchedDatasetError(SteptreeError):
    pass
