"""
shared/exceptions.py
Exception hierarchy. Every error carries the CLI exit code it maps to:
1 for problems the user can fix (inputs, config, flags), 2 for internal failures.
"""

from pathlib import Path
from typing import Optional


class WorkbenchError(Exception):
    exit_code: int = 2

    def __init__(self, message: str):
        super().__init__(message)
        self.message = message


# ── User errors (exit 1) ──────────────────────────────────────

class UserError(WorkbenchError):
    exit_code = 1


class ConfigError(UserError):
    def __init__(
        self,
        message: str,
        key: Optional[str] = None,
        line: Optional[int] = None,
        path: Optional[Path] = None,
    ):
        self.key = key
        self.line = line
        self.path = path
        where = []
        if path is not None:
            where.append(str(path))
        if line is not None:
            where.append(f"line {line}")
        if key is not None:
            where.append(f"key '{key}'")
        prefix = f"[{', '.join(where)}] " if where else ""
        super().__init__(f"{prefix}{message}")


class InputMissingError(UserError):
    pass


class SchemaError(UserError):
    pass


class OutputExistsError(UserError):
    pass


class DimensionMismatchError(UserError):
    pass


class EmptySplitError(UserError):
    pass


class SplitOverlapError(UserError):
    pass


class UndefinedAucError(UserError):
    pass


class FeatureSpecError(UserError):
    pass


class SynthConfigError(UserError):
    pass


# ── Internal errors (exit 2) ──────────────────────────────────

class InternalError(WorkbenchError):
    exit_code = 2


class NonFiniteLossError(InternalError):
    def __init__(self, epoch: int, batch: int, loss: float):
        self.epoch = epoch
        self.batch = batch
        self.loss = loss
        super().__init__(
            f"non-finite loss {loss!r} at epoch {epoch}, batch {batch}; "
            "lower the learning rate or check inputs for extreme values"
        )


class IngestIOError(InternalError):
    """``row`` is the first data row of the chunk whose read failed, not the offending line."""

    def __init__(self, message: str, row: Optional[int] = None):
        self.row = row
        suffix = f" (in the chunk starting at data row {row})" if row is not None else ""
        super().__init__(f"{message}{suffix}")
