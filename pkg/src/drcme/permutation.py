"""Matched train/test permutation tests with amortized model fits.

Matched sets are split whole into a train and a test fold. ``N`` within-set
relabellings of the training fold are drawn once, and nuisance models are
fit for each of them plus the identity (``N + 1`` fits in total). Every
permuted statistic composes one of these cached training relabellings,
chosen uniformly, with a fresh within-set relabelling of the test fold.
The p-value is ``(1 + #{permuted >= observed}) / (m + 1)``.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from drcme import _backend
from drcme.datagen import Dataset
from drcme.kernels import KernelSpec, median_heuristic
from drcme.matching import FoldAssignment, MatchedSets, build_matched_sets, split_sets
from drcme.propensity import Standardizer, fit_logistic
from drcme.statistics import (
    GramCache,
    ModelConfig,
    StatisticConfig,
    StatisticValue,
    StatKind,
    fit_bundle,
    prepare,
)

DEFAULT_N = 20
DEFAULT_M = 200
# permuted values within this relative distance of the observed one count as ties
TIE_RTOL = 1e-10


class PermutationError(RuntimeError):
    pass


@dataclass(frozen=True)
class PermutationPlan:
    fold: FoldAssignment
    train_perms: tuple
    m: int
    seed: int | None

    @property
    def N(self) -> int:
        return len(self.train_perms) - 1


@dataclass
class TestResult:
    __test__ = False  # not a pytest class

    kind: str
    observed: StatisticValue
    permuted_values: np.ndarray
    p_value: float
    diagnostics: dict = field(default_factory=dict)

    @property
    def m(self) -> int:
        return int(self.permuted_values.size)

    @property
    def permuted(self) -> list:
        k = self.observed.kind
        return [StatisticValue(float(v), k, float(v)) for v in self.permuted_values]

    def summary(self) -> dict:
        return {
            "statistic": self.kind,
            "observed_mmd_squared": self.observed.mmd_squared,
            "observed_mmd": self.observed.mmd,
            "p_value": self.p_value,
            "m": self.m,
            **{k: v for k, v in self.diagnostics.items() if np.isscalar(v)},
        }


def permutation_p_value(observed: float, permuted, rtol: float = TIE_RTOL) -> float:
    permuted = np.asarray(permuted, dtype=np.float64)
    thresh = observed - rtol * max(abs(observed), 1e-300)
    return float((1 + np.count_nonzero(permuted >= thresh)) / (permuted.size + 1))


def sample_within_set_permutation(sets, n: int, rng) -> np.ndarray:
    """Uniform shuffle inside each index set, identity elsewhere.

    Applying it to labels is ``T[perm]``.
    """
    perm = np.arange(n)
    for s in sets:
        if len(s) > 1:
            perm[s] = rng.permutation(s)
    return perm


def _local_sets(sets: MatchedSets, chosen, fold_idx):
    pos = {int(g): i for i, g in enumerate(fold_idx)}
    return [np.array([pos[int(g)] for g in sets.sets[k]], dtype=np.intp) for k in chosen]


class _CountingFitter:
    def __init__(self, fit):
        self.fit = fit
        self.calls = 0

    def __call__(self, *args, **kwargs):
        self.calls += 1
        return self.fit(*args, **kwargs)


def _as_config(s):
    if isinstance(s, (StatisticConfig, str, StatKind)):
        return s if isinstance(s, StatisticConfig) else StatisticConfig(StatKind.parse(s))
    return s  # custom statistic object with prepare(cache, bundle)


def _stat_name(s):
    return s.kind.value if isinstance(s, StatisticConfig) else getattr(s, "name", type(s).__name__)


def _prepare_any(cache, bundle, s):
    if isinstance(s, StatisticConfig):
        return prepare(cache, bundle, s)
    return s.prepare(cache, bundle)


def run_permutation_tests(
    data: Dataset,
    statistics=("dr-date",),
    *,
    N: int = DEFAULT_N,
    m: int = DEFAULT_M,
    ratio: float = 0.5,
    seed: int | None = 0,
    models: ModelConfig = ModelConfig(),
    caliper="default",
    controls_per_set: int = 1,
    covariate_kernel: KernelSpec | None = None,
    outcome_kernel: KernelSpec | None = None,
    bundle_fitter=fit_bundle,
) -> dict:
    """Run the matched permutation test for several statistics on one set of draws.

    All statistics share the matching, fold, kernels, model fits and the
    sampled permutations. Returns ``{name: TestResult}``.

    ``statistics`` entries are kind names, :class:`StatisticConfig` objects,
    or objects with ``name`` and ``prepare(cache, bundle)`` returning
    something with ``values(T_batch) -> array``.
    """
    if m < 1:
        raise ValueError("m must be at least 1")
    if N < 0:
        raise ValueError("N must be nonnegative")
    t_start = time.perf_counter()
    configs = [_as_config(s) for s in statistics]
    builtin = [c for c in configs if isinstance(c, StatisticConfig)]
    fold_ss, train_ss, test_ss = np.random.SeedSequence(seed).spawn(3)

    match_prop = fit_logistic(data.X, data.T, ridge=models.logistic_ridge, clip_delta=models.clip_delta)
    sets = build_matched_sets(data, match_prop, caliper, controls_per_set)
    fold = split_sets(sets, ratio, np.random.default_rng(fold_ss))
    tr_idx, te_idx = fold.indices(sets, "train"), fold.indices(sets, "test")
    tr_sets = _local_sets(sets, fold.train_sets, tr_idx)
    te_sets = _local_sets(sets, fold.test_sets, te_idx)

    std = Standardizer.fit(data.X[tr_idx])
    Xs = std.transform(data.X)
    train = Dataset(Xs[tr_idx], data.T[tr_idx], data.Y[tr_idx])
    test = Dataset(Xs[te_idx], data.T[te_idx], data.Y[te_idx])
    pooled = np.concatenate([tr_idx, te_idx])
    if covariate_kernel is None:
        covariate_kernel = KernelSpec.gaussian(median_heuristic(Xs[pooled]))
    if outcome_kernel is None:
        outcome_kernel = KernelSpec.gaussian(median_heuristic(data.Y[pooled]))
    cache = GramCache(train, test, covariate_kernel, outcome_kernel)

    rng_tr = np.random.default_rng(train_ss)
    train_perms = [np.arange(train.n)] + [sample_within_set_permutation(tr_sets, train.n, rng_tr) for _ in range(N)]
    plan = PermutationPlan(fold, tuple(train_perms), m, seed)

    rng_te = np.random.default_rng(test_ss)
    sigma_of_draw = rng_te.integers(0, N + 1, size=m)
    T_draws = np.empty((m, test.n), dtype=np.int8)
    for j in range(m):
        T_draws[j] = test.T[sample_within_set_permutation(te_sets, test.n, rng_te)]

    fitter = _CountingFitter(bundle_fitter)
    names = [_stat_name(c) for c in configs]
    observed = {}
    permuted = {name: np.empty(m) for name in names}
    t_fit = 0.0
    for s in range(N + 1):
        rows = np.flatnonzero(sigma_of_draw == s)
        t0 = time.perf_counter()
        bundle = fitter(cache, train.T[train_perms[s]], builtin, models)
        t_fit += time.perf_counter() - t0
        for c, name in zip(configs, names):
            prep = _prepare_any(cache, bundle, c)
            batch = T_draws[rows]
            if s == 0:
                batch = np.vstack([test.T[None, :], batch])
            try:
                vals = np.asarray(prep.values(batch), dtype=np.float64)
            except Exception as exc:
                raise PermutationError(
                    f"{name}: evaluation failed for train relabelling {s} (draws {rows.tolist()[:10]}...)"
                ) from exc
            if s == 0:
                # observed value goes through the same batch path as the permuted ones
                kind = c.kind if isinstance(c, StatisticConfig) else name
                observed[name] = StatisticValue(float(vals[0]), kind, float(vals[0]))
                vals = vals[1:]
            permuted[name][rows] = vals

    elapsed = time.perf_counter() - t_start
    diagnostics = {
        "fit_bundles": fitter.calls,
        "N": N,
        "n_sets": sets.n_sets,
        "n_unmatched": int(sets.unmatched.size),
        "caliper": np.nan if sets.caliper is None else sets.caliper,
        "n_train": train.n,
        "n_test": test.n,
        "covariate_bandwidth": covariate_kernel.bandwidth,
        "outcome_bandwidth": outcome_kernel.bandwidth,
        "kernel_fingerprint": covariate_kernel.fingerprint() + outcome_kernel.fingerprint(),
        "fit_seconds": t_fit,
        "seconds": elapsed,
        "backend": _backend.BACKEND,
        "plan": plan,
        "sets": sets,
    }
    out = {}
    for name in names:
        obs = observed[name]
        out[name] = TestResult(name, obs, permuted[name], permutation_p_value(obs.mmd_squared, permuted[name]), diagnostics)
    return out


def run_permutation_test(data: Dataset, statistic="dr-date", **kwargs) -> TestResult:
    (result,) = run_permutation_tests(data, (statistic,), **kwargs).values()
    return result
