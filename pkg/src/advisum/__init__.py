"""Multimodal video summarization: keyframes, prompt building, preference
tuning of the summarizer and a frame ranker, plus evaluation metrics."""

from __future__ import annotations

from .errors import (
    AdvisumError,
    BackendError,
    ContractError,
    DependencyError,
    NumericError,
    PersistenceError,
    StaleCacheError,
    ValidationError,
)
from .kernels import IMPLEMENTATION

__version__ = "0.1.0"

__all__ = [
    "AdvisumError",
    "BackendError",
    "ContractError",
    "DependencyError",
    "IMPLEMENTATION",
    "NumericError",
    "PersistenceError",
    "StaleCacheError",
    "ValidationError",
    "__version__",
]
