# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled per-cell kernels; see ``_fallback.py`` for the reference semantics."""

import numpy as np
cimport numpy as cnp

cnp.import_array()


def ztp_sizes(const double[::1] u, const double[::1] cdf):
    cdef Py_ssize_t n = u.shape[0], m = cdf.shape[0], k, lo, hi, mid
    cdef double x
    out = np.empty(n, dtype=np.int64)
    cdef cnp.int64_t[::1] res = out
    with nogil:
        for k in range(n):
            x = u[k]
            # first index with cdf > x
            if x < cdf[0]:
                res[k] = 1
                continue
            lo = 0
            hi = m
            while lo < hi:
                mid = (lo + hi) >> 1
                if cdf[mid] <= x:
                    lo = mid + 1
                else:
                    hi = mid
            if lo > m - 1:
                lo = m - 1
            res[k] = lo + 1
    return out


def target_flags(const cnp.int64_t[::1] sizes, const cnp.int64_t[::1] types):
    cdef Py_ssize_t n = sizes.shape[0], k, j, pos = 0
    out = np.zeros(n, dtype=np.bool_)
    cdef cnp.npy_bool[::1] res = out
    with nogil:
        for k in range(n):
            for j in range(sizes[k]):
                if types[pos + j] == 0:
                    res[k] = 1
                    break
            pos += sizes[k]
    return out


def weighted_type_counts(const cnp.int64_t[::1] sizes, const cnp.int64_t[::1] types,
                         weights, Py_ssize_t r):
    cdef cnp.int64_t[::1] w = np.ascontiguousarray(weights, dtype=np.int64)
    cdef Py_ssize_t n = sizes.shape[0], k, j, pos = 0
    out = np.zeros(r, dtype=np.int64)
    cdef cnp.int64_t[::1] res = out
    cdef cnp.int64_t wk
    with nogil:
        for k in range(n):
            wk = w[k]
            if wk != 0:
                for j in range(sizes[k]):
                    res[types[pos + j]] += wk
            pos += sizes[k]
    return out
