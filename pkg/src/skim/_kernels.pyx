# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernel: row-wise exact top-k selection for memory retrieval."""

import numpy as np
cimport numpy as cnp

cnp.import_array()

ctypedef fused real:
    float
    double


def topk_rows(real[:, ::1] scores, Py_ssize_t k):
    """Indices of the k largest entries per row, best first.

    Ties go to the lower column index.
    """
    cdef Py_ssize_t n_rows = scores.shape[0]
    cdef Py_ssize_t n_cols = scores.shape[1]
    cdef Py_ssize_t kk = k if k < n_cols else n_cols
    out = np.empty((n_rows, kk), dtype=np.int64)
    if kk <= 0:
        return out
    cdef cnp.int64_t[:, ::1] idx = out
    cdef double[::1] best = np.empty(kk, dtype=np.float64)
    cdef Py_ssize_t r, c, j, filled
    cdef double s
    for r in range(n_rows):
        filled = 0
        for c in range(n_cols):
            s = scores[r, c]
            if filled == kk and s <= best[kk - 1]:
                continue
            # insertion keeps equal scores in column order
            j = filled if filled < kk else kk - 1
            while j > 0 and best[j - 1] < s:
                best[j] = best[j - 1]
                idx[r, j] = idx[r, j - 1]
                j -= 1
            best[j] = s
            idx[r, j] = c
            if filled < kk:
                filled += 1
    return out
