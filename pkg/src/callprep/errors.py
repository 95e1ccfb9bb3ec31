"""Exception types shared across the package."""

from __future__ import annotations


class CallprepError(Exception):
    """Base class for all callprep failures."""


# --- corpus ---


class MissingPresentation(CallprepError):
    """Raw transcript has no usable prepared-remarks region."""


class MalformedTurn(CallprepError):
    """A Q&A line appears outside a properly marked speaker turn."""


class EmptyCorpus(CallprepError):
    """An operation that needs at least one transcript got none."""


class IoFailure(CallprepError):
    """Underlying file read/write failed."""


class SchemaViolation(CallprepError):
    """A JSONL record does not match the expected schema."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


# --- retrieval ---


class EmptySegments(CallprepError):
    """Index build requires at least one segment."""


class BackendFailure(CallprepError):
    """A remote scoring/generation backend was unreachable or returned garbage."""


# --- generator ---


class ContextOverflow(CallprepError):
    """Sequence longer than the model context window."""


class EmptyTarget(CallprepError):
    """Loss/gradients need at least one target token."""


class EmptySelection(CallprepError):
    """Generation needs at least one retrieved segment."""


# --- training ---


class NonFiniteGradient(CallprepError):
    """A gradient contains NaN or infinity."""


class ShapeMismatch(CallprepError):
    """Gradient/parameter structures do not line up."""


# --- metrics ---


class LengthMismatch(CallprepError):
    """Parallel hypothesis/reference lists differ in length."""


class TooFewQuestions(CallprepError):
    """Topic model fitting needs at least k questions."""


class AlignmentError(CallprepError):
    """Generated and reference files do not share the same (transcript, question) ids."""

    def __init__(self, message: str, unmatched: list[tuple[str, str]] | None = None):
        super().__init__(message)
        self.unmatched = unmatched or []


# --- cli ---


class ConfigInvalid(CallprepError):
    """A configuration value failed validation."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


class ParseError(CallprepError):
    """A configuration file could not be parsed."""

    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        if line is not None and column is not None:
            message = f"{message} (line {line}, column {column})"
        super().__init__(message)
        self.line = line
        self.column = column
