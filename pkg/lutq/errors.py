"""Exception hierarchy shared by every layer of the toolkit.

Each class also derives from the closest builtin so callers can catch either
the toolkit-specific type or the generic one (``ValueError`` etc.).  The
``exit_code`` attribute is what :mod:`lutq.cli` returns to the shell.
"""

from __future__ import annotations

__all__ = [
    "LUTQError",
    "DimensionError",
    "ArgumentError",
    "AssignmentIndexError",
    "StateError",
    "ContractError",
    "FixedPointOverflowError",
    "ConfigError",
    "CorruptArtifactError",
    "EXIT_OK",
]

EXIT_OK = 0


class LUTQError(Exception):
    """Base class for all toolkit errors."""

    exit_code: int = 1


class DimensionError(LUTQError, ValueError):
    """Tensor shapes do not agree."""


class ArgumentError(LUTQError, ValueError):
    """An argument is outside the operation's domain."""


class AssignmentIndexError(LUTQError, IndexError):
    """An assignment entry points outside its dictionary."""


class StateError(LUTQError, RuntimeError):
    """An operation was called before the state it depends on exists."""


class ContractError(LUTQError, ValueError):
    """A kernel was asked to run on data that violates its contract."""

    exit_code = 4


class FixedPointOverflowError(LUTQError, OverflowError):
    """A fixed-point mantissa left the configured range in raising mode."""

    exit_code = 4


class ConfigError(LUTQError, ValueError):
    """A job or architecture configuration is invalid."""

    exit_code = 2

    def __init__(self, message: str, field: str | None = None) -> None:
        super().__init__(message if field is None else f"{field}: {message}")
        self.field = field


class CorruptArtifactError(LUTQError, ValueError):
    """A model file is truncated, malformed or of an unknown version."""

    exit_code = 3
