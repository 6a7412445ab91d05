"""Select the compiled core when it is importable, numpy otherwise.

Set ``DRCME_BACKEND=python`` to force the fallback.
"""

import os

import numpy as np

from drcme import _fallback

BACKEND = "python"
_impl = _fallback

if os.environ.get("DRCME_BACKEND", "").lower() != "python":
    try:
        from drcme import _core as _impl  # noqa: F811

        BACKEND = "cython"
    except ImportError:
        _impl = _fallback


def _c(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def sq_euclidean(A, B):
    return _impl.sq_euclidean(_c(A), _c(B))


def gaussian_gram(A, B, bandwidth):
    return _impl.gaussian_gram(_c(A), _c(B), float(bandwidth))


def gaussian_gram_sym(X, bandwidth):
    return _impl.gaussian_gram_sym(_c(X), float(bandwidth))


def pairwise_distances(X):
    return _impl.pairwise_distances(_c(X))


# above this share of nonzero weights a BLAS product beats the compiled sparse loop
SPARSE_QUAD_DENSITY = 0.1


def quad_forms(Q, U):
    U = _c(np.atleast_2d(U))
    if _impl is not _fallback and np.count_nonzero(U) <= SPARSE_QUAD_DENSITY * U.size:
        return _impl.quad_forms(_c(Q), U)
    return _fallback.quad_forms(_c(Q), U)
