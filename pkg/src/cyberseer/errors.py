"""Exception hierarchy shared by every module."""

from __future__ import annotations


class CyberseerError(Exception):
    """Base class; ``kind`` is the machine-readable tag the CLI prints."""

    kind = "error"


class InvalidInputError(CyberseerError, ValueError):
    kind = "invalid_input"


class UnsupportedRateError(InvalidInputError):
    kind = "unsupported_rate"


class StateError(CyberseerError, RuntimeError):
    kind = "state"


class ShapeError(InvalidInputError):
    kind = "shape"


class NumericalError(CyberseerError, ArithmeticError):
    kind = "numerical_failure"

    def __init__(self, message: str, layer: str | None = None):
        super().__init__(message)
        self.layer = layer


class DomainError(InvalidInputError):
    kind = "domain"


class ZeroVarianceError(InvalidInputError):
    kind = "zero_variance"


class InvalidTableError(InvalidInputError):
    kind = "invalid_table"


# --- session loading -------------------------------------------------------


class SessionLoadError(CyberseerError):
    kind = "session_load"


class MissingFileError(SessionLoadError, FileNotFoundError):
    kind = "missing_file"

    def __init__(self, path):
        super().__init__(f"missing file: {path}")
        self.path = path


class MissingChannelError(SessionLoadError, KeyError):
    kind = "missing_channel"

    def __init__(self, channel: str):
        super().__init__(channel)
        self.channel = channel

    def __str__(self) -> str:
        return f"missing required channel: {self.channel}"


class MalformedRowError(SessionLoadError, ValueError):
    kind = "malformed_row"

    def __init__(self, path, row: int, reason: str):
        super().__init__(f"{path}: row {row}: {reason}")
        self.path = path
        self.row = row


class LengthMismatchError(SessionLoadError, ValueError):
    kind = "length_mismatch"

    def __init__(self, channel: str, expected: int, actual: int):
        super().__init__(
            f"channel {channel!r} has {actual} samples, expected {expected} (±1)"
        )
        self.channel = channel
        self.expected = expected
        self.actual = actual


# --- checkpoints -----------------------------------------------------------


class CheckpointError(CyberseerError):
    kind = "checkpoint"


class CorruptCheckpointError(CheckpointError):
    kind = "corrupt_checkpoint"


class VersionMismatchError(CheckpointError):
    kind = "version_mismatch"


# --- experiments -----------------------------------------------------------


class FoldError(CyberseerError):
    """A training failure inside one cross-validation fold."""

    kind = "fold_failure"

    def __init__(self, fold: int, cause: BaseException):
        super().__init__(f"fold {fold}: {type(cause).__name__}: {cause}")
        self.fold = fold
        self.cause = cause

    def __reduce__(self):
        return (type(self), (self.fold, self.cause))
