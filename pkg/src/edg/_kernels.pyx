# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Fused row-wise softmax kernels over the last axis of a 2-D fp64 array.

These mirror the numpy fallback in :mod:`edg.kernels` operation for operation
(max subtraction, exp, left-to-right sum) so both backends agree to rounding.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log

cnp.import_array()


def softmax_rows(const double[:, ::1] x):
    cdef Py_ssize_t n = x.shape[0], k = x.shape[1], i, j
    out_arr = np.empty((n, k), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef double m, s
    for i in range(n):
        m = x[i, 0]
        for j in range(1, k):
            if x[i, j] > m:
                m = x[i, j]
        s = 0.0
        for j in range(k):
            out[i, j] = exp(x[i, j] - m)
            s += out[i, j]
        for j in range(k):
            out[i, j] /= s
    return out_arr


def log_softmax_rows(const double[:, ::1] x):
    cdef Py_ssize_t n = x.shape[0], k = x.shape[1], i, j
    out_arr = np.empty((n, k), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef double m, s, lse
    for i in range(n):
        m = x[i, 0]
        for j in range(1, k):
            if x[i, j] > m:
                m = x[i, j]
        s = 0.0
        for j in range(k):
            s += exp(x[i, j] - m)
        lse = log(s)
        for j in range(k):
            out[i, j] = x[i, j] - m - lse
    return out_arr


def softmax_rows_vjp(const double[:, ::1] y, const double[:, ::1] g):
    """Gradient of softmax given its output ``y`` and upstream ``g``."""
    cdef Py_ssize_t n = y.shape[0], k = y.shape[1], i, j
    out_arr = np.empty((n, k), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef double dot
    for i in range(n):
        dot = 0.0
        for j in range(k):
            dot += g[i, j] * y[i, j]
        for j in range(k):
            out[i, j] = y[i, j] * (g[i, j] - dot)
    return out_arr


def log_softmax_rows_vjp(const double[:, ::1] logp, const double[:, ::1] g):
    """Gradient of log-softmax given its output ``logp`` and upstream ``g``."""
    cdef Py_ssize_t n = logp.shape[0], k = logp.shape[1], i, j
    out_arr = np.empty((n, k), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef double s
    for i in range(n):
        s = 0.0
        for j in range(k):
            s += g[i, j]
        for j in range(k):
            out[i, j] = g[i, j] - exp(logp[i, j]) * s
    return out_arr
