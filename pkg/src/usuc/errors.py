"""Exception types shared across the package."""

from __future__ import annotations


class UsucError(Exception):
    """Base class for all package errors."""


class FormatError(UsucError, ValueError):
    """Malformed input data. Carries the 1-based line number when known."""

    def __init__(self, message: str, lineno: int | None = None, source: str | None = None):
        self.lineno = lineno
        self.source = source
        where = ""
        if source is not None:
            where += f"{source}:"
        if lineno is not None:
            where += f"line {lineno}:"
        super().__init__(f"{where} {message}" if where else message)
        self.message = message


class TableFormatError(FormatError):
    """Binary table is corrupt, truncated, or of an unknown version."""
