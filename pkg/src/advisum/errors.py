"""Exception hierarchy shared by every stage.

Each family maps to a distinct process exit code so shell callers can tell
a missing upstream stage apart from bad input or a numeric blow-up.
"""

from __future__ import annotations


class AdvisumError(Exception):
    exit_code = 1


class ContractError(AdvisumError, ValueError):
    """A precondition on an argument was violated."""

    exit_code = 8


class DependencyError(AdvisumError):
    """An upstream stage artifact is missing."""

    exit_code = 3

    def __init__(self, message: str, stage: str | None = None):
        super().__init__(message)
        self.stage = stage


class StaleCacheError(DependencyError):
    exit_code = 3


class ValidationError(AdvisumError, ValueError):
    exit_code = 4


class MalformedManifestError(ValidationError):
    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


class DimensionError(ValidationError):
    pass


class BackendError(AdvisumError):
    exit_code = 5

    def __init__(self, message: str, frame_index: int | None = None):
        if frame_index is not None:
            message = f"{message} (frame {frame_index})"
        super().__init__(message)
        self.frame_index = frame_index


class DecodeError(BackendError):
    pass


class EmptyAssetError(BackendError):
    pass


class NumericError(AdvisumError, ArithmeticError):
    exit_code = 6


class PersistenceError(AdvisumError, OSError):
    exit_code = 7

    def __init__(self, message: str, path=None):
        super().__init__(f"{message}: {path}" if path is not None else message)
        self.path = path


class InsufficientFramesError(ValidationError):
    pass
