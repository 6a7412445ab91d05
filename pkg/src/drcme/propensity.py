"""Logistic propensity model e(x, t) with symmetric clipping.

The fit is a ridge-penalized logistic regression solved by iteratively
reweighted least squares on standardized covariates. The intercept is not
penalized.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

DEFAULT_CLIP = 0.03


class ConvergenceWarning(UserWarning):
    pass


@dataclass(frozen=True)
class Standardizer:
    mean: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, X) -> "Standardizer":
        X = np.asarray(X, dtype=np.float64)
        mean = X.mean(axis=0)
        scale = X.std(axis=0)
        scale = np.where(scale > 0, scale, 1.0)
        return cls(mean, scale)

    @classmethod
    def identity(cls, d: int) -> "Standardizer":
        return cls(np.zeros(d), np.ones(d))

    def transform(self, X) -> np.ndarray:
        return (np.asarray(X, dtype=np.float64) - self.mean) / self.scale


@dataclass(frozen=True)
class PropensityModel:
    """Coefficients act on ``[standardized x, 1]``; the last entry is the intercept."""

    coefficients: np.ndarray
    clip_delta: float = DEFAULT_CLIP
    standardizer: Standardizer | None = None
    converged: bool = True
    n_iter: int = 0
    log_likelihood: float = field(default=np.nan, compare=False)

    def __post_init__(self):
        if not 0.0 < self.clip_delta < 0.5:
            raise ValueError("clip_delta must lie in (0, 0.5)")

    @property
    def dim(self) -> int:
        return len(self.coefficients) - 1

    def logit(self, X) -> np.ndarray:
        """Unclipped linear predictor for ``e(x, 1)``, row-wise."""
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X.reshape(-1, self.dim) if self.dim else X.reshape(1, 0)
        if X.shape[1] != self.dim:
            raise ValueError(f"expected {self.dim} covariates, got {X.shape[1]}")
        if self.standardizer is not None:
            X = self.standardizer.transform(X)
        return X @ self.coefficients[:-1] + self.coefficients[-1]

    def e1(self, X) -> np.ndarray:
        """Clipped ``e(x, 1)`` for every row of ``X``."""
        p = expit(self.logit(X))
        return np.clip(p, self.clip_delta, 1.0 - self.clip_delta)

    def e(self, X, t) -> np.ndarray:
        """Clipped ``e(x, t)``; ``t`` may be a scalar or a per-row array."""
        p1 = self.e1(X)
        t = np.asarray(t)
        return np.where(t == 1, p1, 1.0 - p1)

    def w(self, X, t) -> np.ndarray:
        e = self.e(X, t)
        return (1.0 - e) / e

    def with_clip(self, clip_delta: float) -> "PropensityModel":
        return PropensityModel(
            self.coefficients, clip_delta, self.standardizer, self.converged, self.n_iter, self.log_likelihood
        )


def _penalized_loglik(beta, Z, T, ridge):
    eta = Z @ beta
    ll = np.sum(T * eta - np.logaddexp(0.0, eta))
    return ll - 0.5 * ridge * np.sum(beta[:-1] ** 2)


def fit_logistic(
    X,
    T,
    *,
    max_iter: int = 100,
    tol: float = 1e-10,
    ridge: float | None = None,
    clip_delta: float = DEFAULT_CLIP,
    standardize: bool = True,
) -> PropensityModel:
    """Fit ``P(T=1 | X)`` by penalized IRLS with step halving.

    ``ridge`` defaults to ``1e-6 * n``. Raises ``ValueError`` if only one arm
    is present; warns with :class:`ConvergenceWarning` and returns the best
    iterate if the gradient norm does not fall below ``tol``.
    """
    T = np.asarray(T, dtype=np.float64).ravel()
    n = T.size
    X = np.asarray(X, dtype=np.float64)
    X = np.zeros((n, 0)) if X.size == 0 else X.reshape(n, -1)
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(T))):
        raise ValueError("non-finite entries in X or T")
    if not np.all((T == 0) | (T == 1)):
        raise ValueError("treatment must be binary")
    if T.min() == T.max():
        raise ValueError("both treatment arms must be present to fit a propensity model")
    if ridge is None:
        ridge = 1e-6 * n
    std = Standardizer.fit(X) if standardize else Standardizer.identity(X.shape[1])
    Z = np.hstack([std.transform(X), np.ones((n, 1))])
    d1 = Z.shape[1]
    pen = np.full(d1, ridge)
    pen[-1] = 0.0

    beta = np.zeros(d1)
    pbar = T.mean()
    beta[-1] = np.log(pbar / (1.0 - pbar))
    ll = _penalized_loglik(beta, Z, T, ridge)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        mu = expit(Z @ beta)
        grad = Z.T @ (T - mu) - pen * beta
        if np.linalg.norm(grad) < tol:
            converged = True
            it -= 1
            break
        wts = mu * (1.0 - mu)
        H = (Z * wts[:, None]).T @ Z + np.diag(pen)
        try:
            step = np.linalg.solve(H, grad)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(H, grad, rcond=None)[0]
        scale = 1.0
        while True:
            cand = beta + scale * step
            cand_ll = _penalized_loglik(cand, Z, T, ridge)
            if cand_ll >= ll or scale < 1e-10:
                break
            scale *= 0.5
        if cand_ll < ll:
            # no ascent possible along the Newton direction
            break
        beta, ll = cand, cand_ll
    else:
        mu = expit(Z @ beta)
        grad = Z.T @ (T - mu) - pen * beta
        converged = np.linalg.norm(grad) < tol
    if not converged:
        mu = expit(Z @ beta)
        gnorm = np.linalg.norm(Z.T @ (T - mu) - pen * beta)
        # gradients near machine precision count as converged
        converged = gnorm < max(tol, 1e-8 * max(1.0, np.abs(ll)))
        if not converged:
            warnings.warn(
                f"logistic IRLS stopped after {it} iterations with gradient norm {gnorm:.3g}",
                ConvergenceWarning,
                stacklevel=2,
            )
    return PropensityModel(beta, clip_delta, std, bool(converged), it, float(ll))


def predict_e(model: PropensityModel, x, t: int) -> float:
    x = np.asarray(x, dtype=np.float64).reshape(1, -1)
    return float(model.e(x, t)[0])


def inverse_odds(model: PropensityModel, x, t: int) -> float:
    """``w(x, t) = (1 - e(x, t)) / e(x, t)`` from the clipped score."""
    e = predict_e(model, x, t)
    return (1.0 - e) / e
