"""Exception types raised across the package."""

from __future__ import annotations


class PvpBalanceError(Exception):
    """Base class for all package errors."""


class SizeError(PvpBalanceError, ValueError):
    pass


class ParseError(PvpBalanceError, ValueError):
    def __init__(self, message: str, row: int | None = None) -> None:
        self.row = row
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)


class SchemaError(PvpBalanceError, ValueError):
    pass


class SchemaMismatchError(SchemaError):
    pass


class DimensionError(PvpBalanceError, ValueError):
    pass


class NonFiniteError(PvpBalanceError, FloatingPointError):
    pass


class EmptyInputError(PvpBalanceError, ValueError):
    pass
