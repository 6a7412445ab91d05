"""Counterfactual mean embeddings and the kernel test statistics built on them.

There are two routes to every statistic:

* the *embedding path*: build each embedding as coefficients over concrete
  outcome points (:class:`WeightedEmbedding`) and take the RKHS distance with
  :func:`mmd_between`;
* the *closed form*: write the squared statistic as ``u(T)' Q u(T)`` where
  ``Q`` is assembled from Gram blocks and depends only on the fitted models,
  and ``u`` depends on the treatment vector. This is what permutation tests
  evaluate, since ``Q`` is shared by every test-side relabelling.

The two routes must agree to rounding error; the test suite checks this.
"""

from __future__ import annotations

import enum
import warnings
from dataclasses import dataclass, field

import numpy as np

from drcme import _backend
from drcme.cme import CmeModel, fit_cme
from drcme.datagen import Dataset
from drcme.kernels import KernelSpec, gram
from drcme.propensity import PropensityModel, fit_logistic


class StatKind(str, enum.Enum):
    DATE = "date"
    DR_DATE = "dr-date"
    DETT = "dett"
    DR_DETT = "dr-dett"
    MEAN_DR_BASELINE = "mean-dr"

    @classmethod
    def parse(cls, value) -> "StatKind":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("_", "-")
        for k in cls:
            if key in (k.value, k.name.lower().replace("_", "-")):
                return k
        raise ValueError(f"unknown statistic {value!r}; choose from {[k.value for k in cls]}")


class EmptyArmError(ValueError):
    pass


class NegativeMmdWarning(UserWarning):
    pass


@dataclass(frozen=True)
class StatisticValue:
    mmd_squared: float
    kind: StatKind
    raw: float = field(default=0.0, compare=False)

    @property
    def mmd(self) -> float:
        return float(np.sqrt(max(self.mmd_squared, 0.0)))


def _value(raw: float, kind: StatKind, scale: float = 1.0) -> StatisticValue:
    if raw < -1e-8 * max(scale, 1e-300):
        warnings.warn(f"{kind.value}: squared MMD {raw:.3g} is materially negative", NegativeMmdWarning, stacklevel=3)
    return StatisticValue(max(float(raw), 0.0), kind, float(raw))


# --------------------------------------------------------------------------
# embedding path


@dataclass(frozen=True)
class WeightedEmbedding:
    """An RKHS element ``sum_i test_coef[i] l(y_test_i) + sum_j train_coef[j] l(y_train_{train_idx[j]})``."""

    test_coef: np.ndarray
    train_idx: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.intp))
    train_coef: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def atoms(self):
        """``(dataset_ref, sample_index, coefficient)`` triples for nonzero coefficients."""
        out = [("test", int(i), float(c)) for i, c in enumerate(self.test_coef) if c != 0.0]
        out += [("train", int(i), float(c)) for i, c in zip(self.train_idx, self.train_coef) if c != 0.0]
        return out

    def dense(self, n_train: int) -> np.ndarray:
        """Coefficients over the concatenated bank ``[train outcomes; test outcomes]``."""
        c = np.zeros(n_train + self.test_coef.size)
        np.add.at(c, self.train_idx, self.train_coef)
        c[n_train:] += self.test_coef
        return c


class OutcomeBank:
    """Train and test outcomes with a lazily built Gram over ``[train; test]``."""

    def __init__(self, Y_train, Y_test, outcome_kernel: KernelSpec, L: np.ndarray | None = None):
        self.Y_test = np.asarray(Y_test, dtype=np.float64).reshape(len(Y_test), -1)
        self.Y_train = np.asarray(Y_train, dtype=np.float64).reshape(len(Y_train), self.Y_test.shape[1])
        self.kernel = outcome_kernel
        self._L = L

    @property
    def n_train(self) -> int:
        return self.Y_train.shape[0]

    @property
    def L(self) -> np.ndarray:
        if self._L is None:
            self._L = gram(self.kernel, np.vstack([self.Y_train, self.Y_test]))
        return self._L


def mmd_between(a: WeightedEmbedding, b: WeightedEmbedding, bank: OutcomeBank, kind=StatKind.DATE) -> StatisticValue:
    n_tr = bank.n_train
    if a.test_coef.size != bank.Y_test.shape[0] or b.test_coef.size != bank.Y_test.shape[0]:
        raise ValueError("embedding does not match the outcome bank's test set")
    c = a.dense(n_tr) - b.dense(n_tr)
    L = bank.L
    return _value(float(c @ L @ c), StatKind.parse(kind), float(np.trace(L)))


def _arm(T, t):
    return (np.asarray(T) == t).astype(np.float64)


def _e(prop: PropensityModel, X, t) -> np.ndarray:
    return prop.e(X, t)


def _require(count, what):
    if count == 0:
        raise EmptyArmError(f"no test sample with {what}")


def ipw_embedding(test: Dataset, prop: PropensityModel, t: int) -> WeightedEmbedding:
    m = test.n
    if m == 0:
        raise ValueError("empty test set")
    return WeightedEmbedding(_arm(test.T, t) / (m * _e(prop, test.X, t)))


def dr_embedding(test: Dataset, prop: PropensityModel, cme_t: CmeModel, t: int, e_override=None) -> WeightedEmbedding:
    """Doubly robust embedding of ``Y(t)`` averaged over the test set.

    ``e_override`` replaces the clipped ``e(x_i, t)`` for every test sample.
    """
    if cme_t.arm != t:
        raise ValueError(f"CME is for arm {cme_t.arm}, not {t}")
    m = test.n
    ind = _arm(test.T, t)
    e = _e(prop, test.X, t) if e_override is None else np.broadcast_to(np.asarray(e_override, float), (m,))
    V = cme_t.weights(test.X)
    return WeightedEmbedding(ind / (m * e), cme_t.train_indices, V @ ((1.0 - ind / e) / m))


def empirical_embedding(test: Dataset, t: int) -> WeightedEmbedding:
    ind = _arm(test.T, t)
    n_t = ind.sum()
    _require(n_t, f"T={t}")
    return WeightedEmbedding(ind / n_t)


def dett_embedding_cme(test: Dataset, cme_t: CmeModel, t: int, t_prime: int) -> WeightedEmbedding:
    if t == t_prime:
        raise ValueError("t and t_prime must differ")
    ind = _arm(test.T, t_prime)
    n_tp = ind.sum()
    _require(n_tp, f"T={t_prime}")
    V = cme_t.weights(test.X)
    return WeightedEmbedding(np.zeros(test.n), cme_t.train_indices, V @ ind / n_tp)


def dett_embedding_weighted(
    test: Dataset, prop: PropensityModel, t: int, t_prime: int, normalize: str = "count"
) -> WeightedEmbedding:
    if t == t_prime:
        raise ValueError("t and t_prime must differ")
    ind = _arm(test.T, t)
    raw = ind * prop.w(test.X, t)
    if normalize == "count":
        Z = _arm(test.T, t_prime).sum()
    elif normalize == "self":
        Z = raw.sum()
    else:
        raise ValueError("normalize must be 'count' or 'self'")
    if Z == 0:
        raise EmptyArmError(f"normalizer is zero under {normalize!r} normalization")
    return WeightedEmbedding(raw / Z)


def dr_ett_embedding(test: Dataset, prop: PropensityModel, cme_t: CmeModel, t: int, t_prime: int) -> WeightedEmbedding:
    if t == t_prime:
        raise ValueError("t and t_prime must differ")
    if cme_t.arm != t:
        raise ValueError(f"CME is for arm {cme_t.arm}, not {t}")
    ind_t = _arm(test.T, t)
    ind_tp = _arm(test.T, t_prime)
    n_tp = ind_tp.sum()
    _require(n_tp, f"T={t_prime}")
    wt = ind_t * prop.w(test.X, t)
    V = cme_t.weights(test.X)
    return WeightedEmbedding(wt / n_tp, cme_t.train_indices, V @ ((ind_tp - wt) / n_tp))


def plug_in_date_statistic(test: Dataset, prop: PropensityModel, bank: OutcomeBank) -> StatisticValue:
    return mmd_between(ipw_embedding(test, prop, 1), ipw_embedding(test, prop, 0), bank, StatKind.DATE)


def plug_in_dett_statistic(
    test: Dataset,
    bank: OutcomeBank,
    *,
    prop: PropensityModel | None = None,
    cme_t: CmeModel | None = None,
    t: int = 1,
    t_prime: int = 0,
    mode: str = "weighted",
    normalize: str = "count",
) -> StatisticValue:
    if mode == "weighted":
        emb = dett_embedding_weighted(test, prop, t, t_prime, normalize)
    elif mode == "cme":
        emb = dett_embedding_cme(test, cme_t, t, t_prime)
    else:
        raise ValueError("mode must be 'weighted' or 'cme'")
    return mmd_between(emb, empirical_embedding(test, t_prime), bank, StatKind.DETT)


def dr_date_statistic(test, prop, cme_0, cme_1, bank) -> StatisticValue:
    """DR-DATE through the embedding path."""
    return mmd_between(dr_embedding(test, prop, cme_1, 1), dr_embedding(test, prop, cme_0, 0), bank, StatKind.DR_DATE)


def dr_dett_statistic(test, prop, cme_t, bank, t=1, t_prime=0) -> StatisticValue:
    """DR-DETT through the embedding path."""
    return mmd_between(
        dr_ett_embedding(test, prop, cme_t, t, t_prime), empirical_embedding(test, t_prime), bank, StatKind.DR_DETT
    )


# --------------------------------------------------------------------------
# closed forms


def dr_weights_alpha(T, e1) -> np.ndarray:
    """``(t_i - e_i) / (e_i (1 - e_i))`` with ``e_i = e(x_i, 1)``."""
    return (np.asarray(T, float) - e1) / (e1 * (1.0 - e1))


def dr_weights_beta(T, e_t, t: int = 1) -> np.ndarray:
    """``(1{t_i = t} - e_i) / e_i`` with ``e_i = e(x_i, t)``; for ``t = 1`` this is ``(t_i - e_i) / e_i``."""
    return (_arm(T, t) - e_t) / e_t


@dataclass
class PreparedStatistic:
    """A statistic reduced to ``u(T)' Q u(T)`` for a fixed set of fitted models.

    ``weights`` maps a batch of test treatment vectors ``(P, m)`` to the
    batch of ``u`` vectors. When ``g`` is set the form is rank one
    (``Q = g g'``) and is evaluated as ``(u . g)^2`` directly.
    """

    kind: StatKind
    Q: np.ndarray | None
    weights: object
    g: np.ndarray | None = None
    trace_scale: float = 1.0

    def raw_values(self, T_batch) -> np.ndarray:
        T_batch = np.atleast_2d(np.asarray(T_batch))
        U = self.weights(T_batch)
        if self.g is not None:
            return (U @ self.g) ** 2
        return _backend.quad_forms(self.Q, U)

    def values(self, T_batch) -> np.ndarray:
        """Clamped squared statistics for each row of ``T_batch``."""
        return np.maximum(self.raw_values(T_batch), 0.0)

    def evaluate(self, T) -> StatisticValue:
        raw = float(self.raw_values(np.asarray(T)[None, :])[0])
        return _value(raw, self.kind, self.trace_scale)


class GramCache:
    """Gram blocks shared by every model bundle of one test run.

    Only treatment labels are permuted, so ``L`` over ``[Y_train; Y_test]``
    and the covariate blocks ``K(X_train, X_train)`` and
    ``K(X_train, X_test)`` are computed once.
    """

    def __init__(self, train: Dataset, test: Dataset, covariate_kernel: KernelSpec, outcome_kernel: KernelSpec):
        self.train = train
        self.test = test
        self.covariate_kernel = covariate_kernel
        self.outcome_kernel = outcome_kernel
        self.n_train = train.n
        self.bank = OutcomeBank(train.Y, test.Y, outcome_kernel)
        self._K_trtr = None
        self._K_trte = None

    @property
    def L(self):
        return self.bank.L

    @property
    def L_tete(self):
        return self.L[self.n_train :, self.n_train :]

    @property
    def K_trtr(self):
        if self._K_trtr is None:
            self._K_trtr = gram(self.covariate_kernel, self.train.X)
        return self._K_trtr

    @property
    def K_trte(self):
        if self._K_trte is None:
            self._K_trte = gram(self.covariate_kernel, self.train.X, self.test.X)
        return self._K_trte

    def V(self, cme: CmeModel) -> np.ndarray:
        """CME weights of the test covariates, ``(n_arm, m)``."""
        return cme.weights(None, K_cross=self.K_trte[cme.train_indices])

    def L_arm_test(self, cme: CmeModel) -> np.ndarray:
        return self.L[np.ix_(cme.train_indices, np.arange(self.n_train, self.L.shape[0]))]

    def L_arms(self, a: CmeModel, b: CmeModel) -> np.ndarray:
        return self.L[np.ix_(a.train_indices, b.train_indices)]


def _sym(A):
    return A + A.T


def prepare_dr_date(cache: GramCache, prop: PropensityModel, cme_0: CmeModel, cme_1: CmeModel) -> PreparedStatistic:
    m = cache.test.n
    e = prop.e1(cache.test.X)
    A0 = cache.V(cme_0) * e[None, :]
    A1 = cache.V(cme_1) * (1.0 - e)[None, :]
    L0te, L1te = cache.L_arm_test(cme_0), cache.L_arm_test(cme_1)
    Q = (
        cache.L_tete
        - _sym(A0.T @ L0te)
        - _sym(A1.T @ L1te)
        + A0.T @ cache.L_arms(cme_0, cme_0) @ A0
        + A1.T @ cache.L_arms(cme_1, cme_1) @ A1
        + _sym(A0.T @ cache.L_arms(cme_0, cme_1) @ A1)
    )
    return PreparedStatistic(
        StatKind.DR_DATE, 0.5 * (Q + Q.T), lambda TB: dr_weights_alpha(TB, e) / m, trace_scale=np.trace(cache.L)
    )


def prepare_dr_dett(cache: GramCache, prop: PropensityModel, cme_t: CmeModel, t=1, t_prime=0) -> PreparedStatistic:
    if t == t_prime:
        raise ValueError("t and t_prime must differ")
    Q = _dett_q(cache, cme_t)
    e_t = prop.e(cache.test.X, t)
    n_tp = _fixed_count(cache.test.T, t_prime)
    return PreparedStatistic(
        StatKind.DR_DETT, Q, lambda TB: dr_weights_beta(TB, e_t, t) / n_tp, trace_scale=np.trace(cache.L)
    )


def _dett_q(cache, cme_t):
    V = cache.V(cme_t)
    Q = cache.L_tete - _sym(V.T @ cache.L_arm_test(cme_t)) + V.T @ cache.L_arms(cme_t, cme_t) @ V
    return 0.5 * (Q + Q.T)


def _fixed_count(T, t):
    # within-set permutations preserve arm counts, so n_t' is fixed for a run
    n = int(np.sum(np.asarray(T) == t))
    _require(n, f"T={t}")
    return n


def prepare_plug_in_date(cache: GramCache, prop: PropensityModel) -> PreparedStatistic:
    m = cache.test.n
    e = prop.e1(cache.test.X)
    return PreparedStatistic(
        StatKind.DATE, cache.L_tete, lambda TB: dr_weights_alpha(TB, e) / m, trace_scale=np.trace(cache.L)
    )


def prepare_plug_in_dett(
    cache: GramCache,
    prop: PropensityModel | None = None,
    cme_t: CmeModel | None = None,
    t=1,
    t_prime=0,
    mode="weighted",
    normalize="count",
) -> PreparedStatistic:
    if t == t_prime:
        raise ValueError("t and t_prime must differ")
    n_tp = _fixed_count(cache.test.T, t_prime)
    scale = np.trace(cache.L)
    if mode == "cme":
        return PreparedStatistic(StatKind.DETT, _dett_q(cache, cme_t), lambda TB: _arm(TB, t_prime) / n_tp, trace_scale=scale)
    if mode != "weighted":
        raise ValueError("mode must be 'weighted' or 'cme'")
    w = prop.w(cache.test.X, t)
    if normalize == "count":
        fn = lambda TB: (_arm(TB, t) * w - _arm(TB, t_prime)) / n_tp  # noqa: E731
    elif normalize == "self":

        def fn(TB):
            raw = _arm(TB, t) * w
            Z = raw.sum(axis=1, keepdims=True)
            if np.any(Z == 0):
                raise EmptyArmError("self-normalized weights sum to zero")
            return raw / Z - _arm(TB, t_prime) / n_tp

    else:
        raise ValueError("normalize must be 'count' or 'self'")
    return PreparedStatistic(StatKind.DETT, cache.L_tete, fn, trace_scale=scale)


def dr_date_statistic_closed_form(test, train, prop, cme_0, cme_1, outcome_kernel, covariate_kernel=None):
    cache = GramCache(train, test, covariate_kernel or cme_0.covariate_kernel, outcome_kernel)
    return prepare_dr_date(cache, prop, cme_0, cme_1).evaluate(test.T)


def dr_dett_statistic_closed_form(test, train, prop, cme_t, outcome_kernel, t=1, t_prime=0, covariate_kernel=None):
    cache = GramCache(train, test, covariate_kernel or cme_t.covariate_kernel, outcome_kernel)
    return prepare_dr_dett(cache, prop, cme_t, t, t_prime).evaluate(test.T)


# --------------------------------------------------------------------------
# scalar baseline


@dataclass(frozen=True)
class LinearRegressions:
    """Per-arm ridge regressions of ``y`` on ``[x, 1]`` (intercept penalized too)."""

    coef_0: np.ndarray
    coef_1: np.ndarray
    ridge: float

    def predict(self, X, t) -> np.ndarray:
        Z = np.hstack([np.asarray(X, float), np.ones((len(X), 1))])
        return Z @ (self.coef_1 if t == 1 else self.coef_0)


def fit_linear_regressions(train: Dataset, ridge: float = 1e-3) -> LinearRegressions:
    if train.Y.shape[1] != 1:
        raise ValueError("the mean baseline needs a scalar outcome")
    coefs = []
    for t in (0, 1):
        idx = train.T == t
        if idx.sum() < 1:
            raise EmptyArmError(f"no training sample with T={t}")
        Z = np.hstack([train.X[idx], np.ones((idx.sum(), 1))])
        y = train.Y[idx, 0]
        coefs.append(np.linalg.solve(Z.T @ Z + ridge * np.eye(Z.shape[1]), Z.T @ y))
    return LinearRegressions(coefs[0], coefs[1], ridge)


def _baseline_residual(test: Dataset, prop: PropensityModel, reg: LinearRegressions):
    e = prop.e1(test.X)
    return e, test.Y[:, 0] - (1.0 - e) * reg.predict(test.X, 1) - e * reg.predict(test.X, 0)


def dr_mean_baseline(test: Dataset, train: Dataset, prop: PropensityModel, regressions: LinearRegressions | None = None):
    """``|AIPW estimate of E[Y(1)] - E[Y(0)]|`` on the test set."""
    if regressions is None:
        regressions = fit_linear_regressions(train)
    e, g = _baseline_residual(test, prop, regressions)
    return float(abs(np.mean(dr_weights_alpha(test.T, e) * g)))


def prepare_mean_baseline(cache: GramCache, prop: PropensityModel, reg: LinearRegressions) -> PreparedStatistic:
    m = cache.test.n
    e, g = _baseline_residual(cache.test, prop, reg)
    return PreparedStatistic(StatKind.MEAN_DR_BASELINE, None, lambda TB: dr_weights_alpha(TB, e) / m, g=g)


# --------------------------------------------------------------------------
# model bundles


@dataclass(frozen=True)
class StatisticConfig:
    kind: StatKind = StatKind.DR_DATE
    t: int = 1
    t_prime: int = 0
    dett_mode: str = "weighted"
    normalize: str = "count"

    def __post_init__(self):
        object.__setattr__(self, "kind", StatKind.parse(self.kind))
        if {self.t, self.t_prime} != {0, 1}:
            raise ValueError("t and t_prime must be 0 and 1 in some order")

    @property
    def needs_cme(self) -> bool:
        return self.kind in (StatKind.DR_DATE, StatKind.DR_DETT) or (
            self.kind == StatKind.DETT and self.dett_mode == "cme"
        )


@dataclass(frozen=True)
class ModelConfig:
    clip_delta: float = 0.03
    logistic_ridge: float | None = None
    cme_lambda: float | None = None
    baseline_ridge: float = 1e-3


@dataclass(frozen=True)
class NuisanceBundle:
    prop: PropensityModel
    cme_0: CmeModel | None
    cme_1: CmeModel | None
    regressions: LinearRegressions | None

    def cme(self, t):
        return self.cme_1 if t == 1 else self.cme_0


def fit_bundle(cache: GramCache, T_train, configs, models: ModelConfig = ModelConfig()) -> NuisanceBundle:
    """Fit propensity, CMEs and (if needed) baseline regressions on relabelled training data."""
    train = cache.train
    prop = fit_logistic(train.X, T_train, ridge=models.logistic_ridge, clip_delta=models.clip_delta)
    cme_0 = cme_1 = reg = None
    if any(c.needs_cme for c in configs):
        cme_0 = fit_cme(train.X, T_train, 0, cache.covariate_kernel, models.cme_lambda, gram_matrix=cache.K_trtr)
        cme_1 = fit_cme(train.X, T_train, 1, cache.covariate_kernel, models.cme_lambda, gram_matrix=cache.K_trtr)
    if any(c.kind == StatKind.MEAN_DR_BASELINE for c in configs):
        reg = fit_linear_regressions(train.with_treatment(T_train), models.baseline_ridge)
    return NuisanceBundle(prop, cme_0, cme_1, reg)


def prepare(cache: GramCache, bundle: NuisanceBundle, config: StatisticConfig) -> PreparedStatistic:
    k = config.kind
    if k == StatKind.DATE:
        return prepare_plug_in_date(cache, bundle.prop)
    if k == StatKind.DR_DATE:
        return prepare_dr_date(cache, bundle.prop, bundle.cme_0, bundle.cme_1)
    if k == StatKind.DETT:
        return prepare_plug_in_dett(
            cache, bundle.prop, bundle.cme(config.t), config.t, config.t_prime, config.dett_mode, config.normalize
        )
    if k == StatKind.DR_DETT:
        return prepare_dr_dett(cache, bundle.prop, bundle.cme(config.t), config.t, config.t_prime)
    return prepare_mean_baseline(cache, bundle.prop, bundle.regressions)
