"""Time the compiled kernels against the numpy fallback.

Usage: python benchmarks/bench_kernels.py [--repeat N]
"""

from __future__ import annotations

import argparse
import timeit

import numpy as np

from advisum import _pykernels

try:
    from advisum import _ckernels
except ImportError:  # extension not built
    _ckernels = None


def cases(rng):
    a = rng.integers(0, 256, (360, 640, 3), dtype=np.uint8)
    b = rng.integers(0, 256, (360, 640, 3), dtype=np.uint8)
    s1 = rng.integers(0, 50, 600).astype(np.int64)
    s2 = rng.integers(0, 50, 600).astype(np.int64)
    img = rng.random((240, 320))
    ker = np.exp(-((np.arange(11) - 5) ** 2) / 4.5)  # separable, applied along both axes
    ker /= ker.sum()
    starts = np.sort(rng.uniform(0, 3600, 400))
    ends = starts + rng.uniform(0.5, 8, 400)
    mids = np.sort(rng.uniform(0, 3600, 20000))
    return {
        "luma_mean_abs_diff 640x360": ("luma_mean_abs_diff", (a, b)),
        "lcs_length 600x600": ("lcs_length", (s1, s2)),
        "filter_valid 320x240 k11": ("filter_valid", (img, ker)),
        "assign_midpoints 20k/400": ("assign_midpoints", (mids, starts, ends)),
    }


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    print(f"{'kernel':32s} {'python ms':>10s} {'cython ms':>10s} {'speedup':>8s}")
    for label, (name, inputs) in cases(rng).items():
        py = min(timeit.repeat(lambda: getattr(_pykernels, name)(*inputs), number=1, repeat=args.repeat))
        if _ckernels is None:
            print(f"{label:32s} {py * 1e3:10.2f} {'n/a':>10s} {'':>8s}")
            continue
        cy = min(timeit.repeat(lambda: getattr(_ckernels, name)(*inputs), number=1, repeat=args.repeat))
        print(f"{label:32s} {py * 1e3:10.2f} {cy * 1e3:10.2f} {py / cy:7.1f}x")


if __name__ == "__main__":
    main()
