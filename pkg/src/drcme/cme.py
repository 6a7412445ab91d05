"""Per-arm conditional mean embeddings by kernel ridge regression.

For arm ``t`` with training covariates ``x_1..x_n`` the estimate of
``E[l(Y, .) | X=x, T=t]`` is ``sum_j v_j(x) l(y_j, .)`` with
``v(x) = (K_t + lam I)^-1 k_t(x)``. Embeddings are never materialized;
callers combine the weights with outcome Gram matrices.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from drcme.kernels import KernelSpec, as_points, gram


class CmeFitError(RuntimeError):
    pass


@dataclass(frozen=True)
class CmeModel:
    arm: int
    train_indices: np.ndarray
    X_train: np.ndarray
    weight_matrix: np.ndarray
    lam: float
    covariate_kernel: KernelSpec

    @property
    def n_train(self) -> int:
        return self.X_train.shape[0]

    @property
    def is_zero(self) -> bool:
        return np.isinf(self.lam)

    def weights(self, X, K_cross=None) -> np.ndarray:
        """Weight matrix ``V`` of shape ``(n_train, n_query)``, column ``i`` = ``v(x_i)``.

        ``K_cross`` may supply the precomputed ``k(X_train, X)`` block.
        """
        if K_cross is None:
            K_cross = gram(self.covariate_kernel, self.X_train, as_points(X))
        if self.is_zero:
            return np.zeros_like(K_cross)
        return self.weight_matrix @ K_cross


def default_lambda(K: np.ndarray) -> float:
    """``n^-1/2`` times the mean Gram diagonal."""
    n = K.shape[0]
    return float(np.mean(np.diag(K)) / np.sqrt(n))


def fit_cme(
    X,
    T,
    arm: int,
    covariate_kernel: KernelSpec,
    lam: float | None = None,
    *,
    gram_matrix: np.ndarray | None = None,
) -> CmeModel:
    """Fit the arm-``arm`` embedding on training covariates ``X`` and labels ``T``.

    ``gram_matrix`` may pass the full training covariate Gram so that the arm
    block is sliced rather than recomputed. ``lam=inf`` yields the zero
    embedding (the infinite-shrinkage limit).
    """
    X = as_points(X)
    T = np.asarray(T).ravel()
    idx = np.flatnonzero(T == arm)
    if idx.size < 2:
        raise CmeFitError(f"arm {arm} has {idx.size} training samples; need at least 2")
    Xa = X[idx]
    if lam is not None and np.isinf(lam):
        return CmeModel(arm, idx, Xa, np.zeros((idx.size, idx.size)), float("inf"), covariate_kernel)
    K = gram_matrix[np.ix_(idx, idx)] if gram_matrix is not None else gram(covariate_kernel, Xa)
    if lam is None:
        lam = default_lambda(K)
    if lam <= 0:
        raise ValueError("lambda must be positive")
    A = K + lam * np.eye(idx.size)
    try:
        c = linalg.cho_factor(A, lower=True, check_finite=False)
    except linalg.LinAlgError as exc:
        raise CmeFitError(f"Cholesky factorization failed for lambda={lam:g}; try a larger lambda") from exc
    W = linalg.cho_solve(c, np.eye(idx.size), check_finite=False)
    W = 0.5 * (W + W.T)
    return CmeModel(arm, idx, Xa, W, float(lam), covariate_kernel)


def cme_weights(model: CmeModel, x) -> np.ndarray:
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    if x.shape[-1] != model.X_train.shape[1]:
        raise ValueError(f"expected {model.X_train.shape[1]} covariates, got {x.shape[-1]}")
    return model.weights(x.reshape(1, -1))[:, 0]
