"""Hot-loop dispatch.

The compiled extension is used when it imports; otherwise the numpy
fallback is selected. Set ``ADVISUM_PURE_PYTHON=1`` to force the fallback.
``IMPLEMENTATION`` records which one is live.
"""

from __future__ import annotations

import os

import numpy as np

from . import _pykernels

if os.environ.get("ADVISUM_PURE_PYTHON", "") not in ("", "0"):
    _impl = _pykernels
else:
    try:
        from . import _ckernels as _impl
    except ImportError:
        _impl = _pykernels

IMPLEMENTATION = "cython" if _impl is not _pykernels else "python"


def luma_mean_abs_diff(a: np.ndarray, b: np.ndarray) -> float:
    return float(_impl.luma_mean_abs_diff(np.ascontiguousarray(a, np.uint8),
                                          np.ascontiguousarray(b, np.uint8)))


def lcs_length(a, b) -> int:
    return int(_impl.lcs_length(np.ascontiguousarray(a, np.int64),
                                np.ascontiguousarray(b, np.int64)))


def filter_valid(img: np.ndarray, k: np.ndarray) -> np.ndarray:
    return np.asarray(_impl.filter_valid(np.ascontiguousarray(img, np.float64),
                                         np.ascontiguousarray(k, np.float64)))


def assign_midpoints(mids, starts, ends) -> np.ndarray:
    return np.asarray(_impl.assign_midpoints(np.ascontiguousarray(mids, np.float64),
                                             np.ascontiguousarray(starts, np.float64),
                                             np.ascontiguousarray(ends, np.float64)))
