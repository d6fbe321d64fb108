"""Motion scoring between consecutive frames and top-m keyframe selection."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import (
    AdvisumError,
    BackendError,
    ContractError,
    DimensionError,
    InsufficientFramesError,
    ValidationError,
)

DEFAULT_BUDGET = 16


class ProxyFlow:
    """Dense intensity-difference stand-in for an optical-flow network.

    The per-pixel "displacement" is |Δ luminance| / 255 (ITU-R 601 luma), a
    one-component field whose norm is its absolute value.
    """

    name = "proxy"

    def field(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        w = np.array([0.299, 0.587, 0.114])
        d = (b.astype(np.float64) @ w - a.astype(np.float64) @ w) / 255.0
        return np.abs(d)[..., None]

    def mean_magnitude(self, a: np.ndarray, b: np.ndarray) -> float:
        return kernels.luma_mean_abs_diff(a, b)


class FarnebackFlow:
    """OpenCV's dense Farnebäck optical flow; magnitudes are pixels/interval."""

    name = "opencv"

    def __init__(self, pyr_scale=0.5, levels=3, winsize=15, iterations=3, poly_n=5, poly_sigma=1.2):
        self.params = (pyr_scale, levels, winsize, iterations, poly_n, poly_sigma, 0)

    def field(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        import cv2

        ga = cv2.cvtColor(np.ascontiguousarray(a), cv2.COLOR_RGB2GRAY)
        gb = cv2.cvtColor(np.ascontiguousarray(b), cv2.COLOR_RGB2GRAY)
        return cv2.calcOpticalFlowFarneback(ga, gb, None, *self.params)


@dataclass(frozen=True)
class FlowScore:
    frame_index: int
    timestamp_s: float
    magnitude: float

    def __post_init__(self):
        if not self.magnitude >= 0:
            raise ValidationError(f"flow magnitude must be >= 0, got {self.magnitude}")


@dataclass
class KeyframeSet:
    asset_id: str
    selected: list[FlowScore]
    budget_m: int

    def __post_init__(self):
        if len(self.selected) > self.budget_m:
            raise ValidationError("more keyframes than the budget")
        if any(b.timestamp_s <= a.timestamp_s for a, b in zip(self.selected, self.selected[1:])):
            raise ValidationError("keyframes must be sorted by timestamp")

    @property
    def indices(self) -> list[int]:
        return [s.frame_index for s in self.selected]

    def to_dict(self) -> dict:
        return {"asset_id": self.asset_id, "budget_m": self.budget_m,
                "selected": [{"frame_index": s.frame_index, "timestamp_s": s.timestamp_s,
                              "magnitude": s.magnitude} for s in self.selected]}

    @classmethod
    def from_dict(cls, d: dict) -> "KeyframeSet":
        return cls(d["asset_id"], [FlowScore(**s) for s in d["selected"]], d["budget_m"])


def flow_magnitude(frame_a: np.ndarray, frame_b: np.ndarray, estimator=None) -> float:
    """Mean Euclidean norm of the estimator's displacement field from a to b.

    Raises:
        DimensionError: frames differ in shape.
        BackendError: the estimator failed or returned a malformed field.
    """
    if frame_a.shape != frame_b.shape:
        raise DimensionError(f"frame shapes differ: {frame_a.shape} vs {frame_b.shape}")
    estimator = estimator or ProxyFlow()
    try:
        fast = getattr(estimator, "mean_magnitude", None)
        if fast is not None:
            value = float(fast(frame_a, frame_b))
        else:
            flow = np.asarray(estimator.field(frame_a, frame_b), dtype=np.float64)
            if flow.shape[:2] != frame_a.shape[:2]:
                raise BackendError(f"flow field shape {flow.shape} does not match frames")
            value = float(np.linalg.norm(flow.reshape(flow.shape[0], flow.shape[1], -1), axis=-1).mean())
    except AdvisumError:
        raise
    except Exception as e:
        raise BackendError(f"flow estimator failed: {e!r}") from e
    if not np.isfinite(value) or value < 0:
        raise BackendError(f"flow estimator produced invalid magnitude {value}")
    return value


def score_sequence(seq, estimator=None) -> list[FlowScore]:
    """One score per consecutive pair, credited to the later frame."""
    return [FlowScore(i, seq.timestamps[i], flow_magnitude(seq.images[i - 1], seq.images[i], estimator))
            for i in range(1, len(seq.images))]


def select_keyframes(seq, m: int = DEFAULT_BUDGET, estimator=None) -> KeyframeSet:
    """Top-``m`` frames by motion magnitude, returned in time order.

    Ties in magnitude prefer the earlier frame. A budget larger than the
    number of scoreable frames returns all of them.

    Raises:
        ContractError: ``m`` is not a positive integer.
        InsufficientFramesError: fewer than two frames.
    """
    if isinstance(m, bool) or int(m) != m or m <= 0:
        raise ContractError(f"keyframe budget must be a positive integer, got {m!r}")
    if len(seq.images) < 2:
        raise InsufficientFramesError(f"need at least 2 frames to score motion, got {len(seq.images)}")
    scores = score_sequence(seq, estimator)
    ranked = sorted(scores, key=lambda s: (-s.magnitude, s.timestamp_s))[: int(m)]
    ranked.sort(key=lambda s: s.timestamp_s)
    return KeyframeSet(seq.asset_id, ranked, int(m))
