"""Exception types raised across the package.

Everything derives from :class:`MMSearchError` so callers can catch the
package's failures with one handler while still distinguishing the cases
that matter (schema problems, malformed input files, protocol faults).
"""

from __future__ import annotations


class MMSearchError(Exception):
    """Base class for all errors raised by this package."""


class SchemaError(MMSearchError):
    """A value does not match the declared kind of its space."""


class DimensionError(SchemaError):
    """Two vectors (or a vector and its schema) disagree on length."""


class StatsError(MMSearchError):
    """Normalization statistics are missing, malformed, or non-positive."""


class InsufficientDataError(MMSearchError):
    """An operation needs more objects than the dataset provides."""


class DatasetFormatError(MMSearchError):
    """A schema or data file could not be parsed.

    Carries the 1-based line and column of the offending input when known.
    """

    def __init__(self, message: str, *, line: int | None = None,
                 column: int | None = None):
        loc = ""
        if line is not None:
            loc = f" (line {line}" + (f", column {column}" if column is not None else "") + ")"
        super().__init__(message + loc)
        self.line = line
        self.column = column


class DuplicateIdError(DatasetFormatError):
    """Two data rows declare the same object id."""


class InvalidWeightsError(MMSearchError):
    """A weight vector is out of range, mis-sized, or sums to zero."""


class UnknownIdError(MMSearchError):
    """An object id was referenced that the dataset does not contain."""


class QueryError(MMSearchError):
    """A query parameter (radius, k) violates its contract."""


class IndexStateError(MMSearchError):
    """An index operation violated a structural precondition."""


class SqlSyntaxError(MMSearchError):
    """A statement failed to parse.

    ``offset`` is the 0-based byte offset of the offending token and
    ``expected`` names the token kinds that would have been accepted there.
    """

    def __init__(self, message: str, offset: int, expected: tuple[str, ...] = ()):
        detail = f"{message} at offset {offset}"
        if expected:
            detail += " (expected " + " | ".join(sorted(expected)) + ")"
        super().__init__(detail)
        self.offset = offset
        self.expected = tuple(sorted(expected))


class BindError(MMSearchError):
    """A parsed statement does not fit the dataset it was bound against."""


class ProtocolError(MMSearchError):
    """A wire frame or message could not be decoded."""


class WorkerFailureError(MMSearchError):
    """A worker died or timed out mid-query; names the worker."""

    def __init__(self, worker: int | str, message: str):
        super().__init__(f"worker {worker}: {message}")
        self.worker = worker


class TrainingError(MMSearchError):
    """Weight learning could not proceed (degenerate batch or weights)."""


class ContainerFormatError(MMSearchError):
    """A serialized index or dataset file is corrupt or unsupported."""
