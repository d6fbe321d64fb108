"""Pure Python/numpy versions of the compiled kernels."""

from __future__ import annotations

import numpy as np

_LUMA = np.array([0.299, 0.587, 0.114])


def luma_mean_abs_diff(a: np.ndarray, b: np.ndarray) -> float:
    ya = a.astype(np.float64) @ _LUMA
    yb = b.astype(np.float64) @ _LUMA
    return float(np.abs(ya - yb).mean() / 255.0)


def lcs_length(a, b) -> int:
    a = list(a)
    b = list(b)
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b, 1):
            if x == y:
                cur.append(prev[j - 1] + 1)
            else:
                cur.append(max(prev[j], cur[j - 1]))
        prev = cur
    return prev[-1]


def filter_valid(img: np.ndarray, k: np.ndarray) -> np.ndarray:
    n = len(k)
    win = np.lib.stride_tricks.sliding_window_view(img, n, axis=1)
    rows = win @ k
    win = np.lib.stride_tricks.sliding_window_view(rows, n, axis=0)
    return win @ k


def assign_midpoints(mids: np.ndarray, starts: np.ndarray, ends: np.ndarray) -> np.ndarray:
    out = np.empty(len(mids), dtype=np.int64)
    for i, m in enumerate(mids):
        best, best_d = -1, 0.0
        for s in range(len(starts)):
            if starts[s] <= m <= ends[s]:
                best = s
                break
            d = starts[s] - m if m < starts[s] else m - ends[s]
            if best < 0 or d < best_d:
                best, best_d = s, d
        out[i] = best
    return out
