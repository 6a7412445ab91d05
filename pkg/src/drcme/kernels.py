"""Kernels on covariate and outcome spaces, Gram matrices and bandwidths.

Only the gaussian and linear families are provided. The gaussian kernel is
``exp(-||x - y||^2 / (2 * bandwidth^2))``. Further families (e.g. Matern)
slot in by extending :class:`KernelSpec` and :func:`gram`.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from drcme import _backend

GAUSSIAN = "gaussian"
LINEAR = "linear"


class DegenerateBandwidthError(ValueError):
    """Raised when a bandwidth cannot be derived from the data."""


@dataclass(frozen=True)
class KernelSpec:
    family: str = GAUSSIAN
    bandwidth: float | None = 1.0

    def __post_init__(self):
        if self.family not in (GAUSSIAN, LINEAR):
            raise ValueError(f"unknown kernel family {self.family!r}")
        if self.family == GAUSSIAN:
            if self.bandwidth is None or not np.isfinite(self.bandwidth) or self.bandwidth <= 0:
                raise ValueError("gaussian kernel needs a positive finite bandwidth")

    @classmethod
    def gaussian(cls, bandwidth: float) -> "KernelSpec":
        return cls(GAUSSIAN, float(bandwidth))

    @classmethod
    def linear(cls) -> "KernelSpec":
        return cls(LINEAR, None)

    def fingerprint(self) -> str:
        """Stable hash used to assert one kernel is shared across permutations."""
        text = f"{self.family}:{self.bandwidth!r}"
        return hashlib.sha1(text.encode()).hexdigest()[:16]


def as_points(A) -> np.ndarray:
    """Coerce a point set to a 2-d float array, one point per row."""
    A = np.asarray(A, dtype=np.float64)
    if A.ndim == 0:
        A = A.reshape(1, 1)
    elif A.ndim == 1:
        A = A[:, None]
    return A


def kernel_eval(spec: KernelSpec, x, y) -> float:
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    y = np.atleast_1d(np.asarray(y, dtype=np.float64))
    if x.shape != y.shape:
        raise ValueError(f"dimension mismatch: {x.shape} vs {y.shape}")
    if spec.family == LINEAR:
        return float(x @ y)
    d = x - y
    return float(np.exp(-(d @ d) / (2.0 * spec.bandwidth**2)))


def gram(spec: KernelSpec, A, B=None) -> np.ndarray:
    """Dense Gram matrix ``G[i, j] = k(A[i], B[j])``; ``B`` defaults to ``A``."""
    A = as_points(A)
    B = A if B is None else as_points(B)
    if A.shape[0] == 0 or B.shape[0] == 0:
        raise ValueError("empty point set")
    if A.shape[1] != B.shape[1]:
        raise ValueError(f"dimension mismatch: {A.shape[1]} vs {B.shape[1]}")
    if spec.family == LINEAR:
        G = A @ B.T
        return 0.5 * (G + G.T) if B is A else G
    if B is A:
        return _backend.gaussian_gram_sym(A, spec.bandwidth)
    return _backend.gaussian_gram(A, B, spec.bandwidth)


def median_heuristic(points) -> float:
    """Median pairwise Euclidean distance over distinct pairs, zeros excluded."""
    X = as_points(points)
    if X.shape[0] < 2:
        raise DegenerateBandwidthError("need at least two points")
    d = _backend.pairwise_distances(X)
    d = d[d > 0]
    if d.size == 0:
        raise DegenerateBandwidthError("all points are identical")
    return float(np.median(d))
