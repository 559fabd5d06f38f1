# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled LUT-GEMM kernels (same loop order as the numpy fallback)."""

import numpy as np
cimport numpy as cnp
from libc.stdint cimport int64_t

cnp.import_array()


def lut_gemm(const int64_t[:, ::1] widx, const int64_t[:, ::1] xidx,
             const int64_t[::1] table, Py_ssize_t n):
    cdef Py_ssize_t M = widx.shape[0], K = widx.shape[1], N = xidx.shape[1]
    cdef Py_ssize_t i, j, k, base
    out = np.zeros((M, N), dtype=np.int64)
    cdef int64_t[:, ::1] y = out
    with nogil:
        for i in range(M):
            for k in range(K):
                base = widx[i, k] * n
                for j in range(N):
                    y[i, j] += table[base + xidx[k, j]]
    return out


def lut_backward_x(const double[:, ::1] dy, const int64_t[:, ::1] widx,
                   const int64_t[:, ::1] xidx, const double[::1] grad,
                   Py_ssize_t a, Py_ssize_t b):
    cdef Py_ssize_t M = widx.shape[0], K = widx.shape[1], N = xidx.shape[1]
    cdef Py_ssize_t i, j, k, base
    out = np.zeros((K, N), dtype=np.float64)
    cdef double[:, ::1] acc = out
    with nogil:
        for i in range(M):
            for k in range(K):
                base = widx[i, k] * a
                for j in range(N):
                    acc[k, j] = acc[k, j] + dy[i, j] * grad[base + xidx[k, j] * b]
    return out


def lut_backward_w(const double[:, ::1] dy, const int64_t[:, ::1] widx,
                   const int64_t[:, ::1] xidx, const double[::1] grad,
                   Py_ssize_t a, Py_ssize_t b):
    cdef Py_ssize_t M = widx.shape[0], K = widx.shape[1], N = xidx.shape[1]
    cdef Py_ssize_t i, j, k, base
    cdef double s
    out = np.zeros((M, K), dtype=np.float64)
    cdef double[:, ::1] acc = out
    with nogil:
        for i in range(M):
            for k in range(K):
                base = widx[i, k] * a
                s = 0.0
                for j in range(N):
                    s = s + dy[i, j] * grad[base + xidx[k, j] * b]
                acc[i, k] = s
    return out
