# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels for Gram construction and batched quadratic forms."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, sqrt

cnp.import_array()


def sq_euclidean(const double[:, ::1] A, const double[:, ::1] B):
    """Squared Euclidean distances between the rows of ``A`` and ``B``."""
    cdef Py_ssize_t n = A.shape[0], m = B.shape[0], d = A.shape[1]
    cdef Py_ssize_t i, j, k
    cdef double acc, diff
    out = np.empty((n, m), dtype=np.float64)
    cdef double[:, ::1] D = out
    with nogil:
        for i in range(n):
            for j in range(m):
                acc = 0.0
                for k in range(d):
                    diff = A[i, k] - B[j, k]
                    acc = acc + diff * diff
                D[i, j] = acc
    return out


def gaussian_gram(const double[:, ::1] A, const double[:, ::1] B, double bandwidth):
    cdef Py_ssize_t n = A.shape[0], m = B.shape[0], d = A.shape[1]
    cdef Py_ssize_t i, j, k
    cdef double acc, diff
    cdef double scale = -0.5 / (bandwidth * bandwidth)
    out = np.empty((n, m), dtype=np.float64)
    cdef double[:, ::1] G = out
    with nogil:
        for i in range(n):
            for j in range(m):
                acc = 0.0
                for k in range(d):
                    diff = A[i, k] - B[j, k]
                    acc = acc + diff * diff
                G[i, j] = exp(scale * acc)
    return out


def gaussian_gram_sym(const double[:, ::1] X, double bandwidth):
    """Square Gram of ``X`` with itself; the upper triangle is mirrored."""
    cdef Py_ssize_t n = X.shape[0], d = X.shape[1]
    cdef Py_ssize_t i, j, k
    cdef double acc, diff, v
    cdef double scale = -0.5 / (bandwidth * bandwidth)
    out = np.empty((n, n), dtype=np.float64)
    cdef double[:, ::1] G = out
    with nogil:
        for i in range(n):
            G[i, i] = 1.0
            for j in range(i + 1, n):
                acc = 0.0
                for k in range(d):
                    diff = X[i, k] - X[j, k]
                    acc = acc + diff * diff
                v = exp(scale * acc)
                G[i, j] = v
                G[j, i] = v
    return out


def pairwise_distances(const double[:, ::1] X):
    """Condensed Euclidean distances over distinct pairs ``i < j``."""
    cdef Py_ssize_t n = X.shape[0], d = X.shape[1]
    cdef Py_ssize_t i, j, k, p = 0
    cdef double acc, diff
    out = np.empty(n * (n - 1) // 2, dtype=np.float64)
    cdef double[::1] D = out
    with nogil:
        for i in range(n):
            for j in range(i + 1, n):
                acc = 0.0
                for k in range(d):
                    diff = X[i, k] - X[j, k]
                    acc = acc + diff * diff
                D[p] = sqrt(acc)
                p = p + 1
    return out


def quad_forms(const double[:, ::1] Q, const double[:, ::1] U):
    """``out[p] = U[p] @ Q @ U[p]`` for symmetric ``Q``.

    Zero entries of ``U[p]`` are skipped, so indicator-like weight rows are
    cheap.
    """
    cdef Py_ssize_t P = U.shape[0], n = U.shape[1]
    cdef Py_ssize_t p, i, j, nnz
    cdef double acc, row, ui
    cdef cnp.intp_t[::1] idx = np.empty(n, dtype=np.intp)
    out = np.empty(P, dtype=np.float64)
    cdef double[::1] res = out
    with nogil:
        for p in range(P):
            nnz = 0
            for i in range(n):
                if U[p, i] != 0.0:
                    idx[nnz] = i
                    nnz = nnz + 1
            acc = 0.0
            for i in range(nnz):
                ui = U[p, idx[i]]
                row = 0.5 * Q[idx[i], idx[i]] * ui
                for j in range(i + 1, nnz):
                    row = row + Q[idx[i], idx[j]] * U[p, idx[j]]
                acc = acc + 2.0 * ui * row
            res[p] = acc
    return out
