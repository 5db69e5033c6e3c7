"""Exception hierarchy. Every error knows the process exit status it maps to."""
from __future__ import annotations

from typing import Any, Dict


class FlippedRiskError(Exception):
    """Base class for all package errors."""

    exit_code: int = 1

    def to_record(self) -> Dict[str, Any]:
        """Return a machine-readable record of the error."""
        return {
            "error": type(self).__name__,
            "message": str(self),
            "exit_code": self.exit_code,
        }


class ConfigError(FlippedRiskError):
    """Invalid configuration or a referenced file that does not exist."""

    exit_code = 2


class DataError(FlippedRiskError):
    """The data could not be read or does not fit its schema."""

    exit_code = 3


class SchemaError(DataError):
    """A schema file is malformed or the CSV lacks a declared column."""

    def __init__(self, message: str, column: str | None = None) -> None:
        super().__init__(message)
        self.column = column

    def to_record(self) -> Dict[str, Any]:
        record = super().to_record()
        record["column"] = self.column
        return record


class EmptyDataError(DataError):
    """The input holds no rows."""


class ColumnMismatchError(DataError):
    """A design matrix does not carry the columns a model was fit on."""

    def __init__(self, column: str, message: str | None = None) -> None:
        super().__init__(message or f"Column mismatch at {column!r}")
        self.column = column

    def to_record(self) -> Dict[str, Any]:
        record = super().to_record()
        record["column"] = self.column
        return record


class NumericalError(FlippedRiskError):
    """The inputs cannot support the requested computation."""

    exit_code = 4


class DegenerateLabelsError(NumericalError):
    """Binary labels contain a single class."""
