# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner loops. Semantics must match ``_pykernels`` exactly."""

import numpy as np
cimport numpy as cnp
from libc.math cimport fabs

cnp.import_array()

cdef double WR = 0.299
cdef double WG = 0.587
cdef double WB = 0.114


def luma_mean_abs_diff(const unsigned char[:, :, ::1] a, const unsigned char[:, :, ::1] b):
    """Mean |luma(a) - luma(b)| / 255 over all pixels."""
    cdef Py_ssize_t h = a.shape[0], w = a.shape[1], i, j
    cdef double ya, yb, acc = 0.0
    for i in range(h):
        for j in range(w):
            ya = WR * a[i, j, 0] + WG * a[i, j, 1] + WB * a[i, j, 2]
            yb = WR * b[i, j, 0] + WG * b[i, j, 1] + WB * b[i, j, 2]
            acc += fabs(ya - yb)
    return acc / (h * w) / 255.0


def lcs_length(const long long[::1] a, const long long[::1] b):
    cdef Py_ssize_t n = a.shape[0], m = b.shape[0], i, j
    if n == 0 or m == 0:
        return 0
    cdef long long[::1] prev = np.zeros(m + 1, dtype=np.int64)
    cdef long long[::1] cur = np.zeros(m + 1, dtype=np.int64)
    cdef long long[::1] tmp
    for i in range(1, n + 1):
        cur[0] = 0
        for j in range(1, m + 1):
            if a[i - 1] == b[j - 1]:
                cur[j] = prev[j - 1] + 1
            elif prev[j] >= cur[j - 1]:
                cur[j] = prev[j]
            else:
                cur[j] = cur[j - 1]
        tmp = prev
        prev = cur
        cur = tmp
    return int(prev[m])


def filter_valid(const double[:, ::1] img, const double[::1] k):
    """Separable 'valid' correlation of a 2-D image with a 1-D kernel on both axes."""
    cdef Py_ssize_t h = img.shape[0], w = img.shape[1], n = k.shape[0]
    cdef Py_ssize_t oh = h - n + 1, ow = w - n + 1, i, j, t
    cdef double acc
    rows_np = np.empty((h, ow), dtype=np.float64)
    out_np = np.empty((oh, ow), dtype=np.float64)
    cdef double[:, ::1] rows = rows_np
    cdef double[:, ::1] out = out_np
    for i in range(h):
        for j in range(ow):
            acc = 0.0
            for t in range(n):
                acc += k[t] * img[i, j + t]
            rows[i, j] = acc
    for i in range(oh):
        for j in range(ow):
            acc = 0.0
            for t in range(n):
                acc += k[t] * rows[i + t, j]
            out[i, j] = acc
    return out_np


def assign_midpoints(const double[::1] mids, const double[::1] starts, const double[::1] ends):
    """Index of the segment owning each midpoint.

    Closed-interval containment, first (earliest) segment wins; otherwise the
    segment at the smallest distance, earliest on ties.
    """
    cdef Py_ssize_t nw = mids.shape[0], ns = starts.shape[0], i, s, best
    cdef double m, d, best_d
    out_np = np.empty(nw, dtype=np.int64)
    cdef long long[::1] out = out_np
    for i in range(nw):
        m = mids[i]
        best = -1
        best_d = 0.0
        for s in range(ns):
            if starts[s] <= m <= ends[s]:
                best = s
                break
            if m < starts[s]:
                d = starts[s] - m
            else:
                d = m - ends[s]
            if best < 0 or d < best_d:
                best = s
                best_d = d
        out[i] = best
    return out_np
