"""Experiment suites: embedding convergence, power curves, CSV calibration and
single tests. Each suite returns a list of :class:`ResultRow` and can write
them to CSV together with a summary table.

Replicates run in a process pool sized by ``DRCME_WORKERS`` (default 1).
Every replicate draws its seed from ``(seed, grid index, replicate)`` so the
output does not depend on scheduling.
"""

from __future__ import annotations

import csv
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from drcme import statistics as st
from drcme.cme import fit_cme
from drcme.datagen import DGP_EFFECT, Dataset, DgpSpec, generate, load_counterfactual_csv, oracle_embedding_sample
from drcme.kernels import KernelSpec, as_points, gram, median_heuristic
from drcme.permutation import run_permutation_tests
from drcme.propensity import Standardizer, fit_logistic
from drcme.statistics import ModelConfig, StatisticConfig, StatKind

SUITES = ("fit_convergence", "power_curve", "calibration", "single_test")
ALL_STATS = ("date", "dr-date", "dett", "dr-dett")
ROW_FIELDS = ("suite", "setting", "statistic", "grid_point", "replicate", "value", "reject", "runtime_seconds")
SUMMARY_FIELDS = ("suite", "setting", "statistic", "grid_point", "count", "mean", "se", "median")


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    suite: str = "power_curve"
    dgp: DgpSpec = field(default_factory=lambda: DgpSpec(DGP_EFFECT, n=500))
    csv_path: str | None = None
    csv_schema: dict = field(default_factory=dict)
    statistics: tuple = ALL_STATS
    grid: tuple = (0.0,)
    z_modes: tuple = ("one",)
    replicates: int = 50
    N: int = 20
    m: int = 200
    ratio: float = 0.5
    alpha: float = 0.05
    seed: int = 0
    n_oracle: int = 100_000
    subsample: float = 0.8
    models: ModelConfig = field(default_factory=ModelConfig)
    output_dir: str | None = None

    def validate(self) -> "ExperimentConfig":
        if self.suite not in SUITES:
            raise ConfigError(f"unknown suite {self.suite!r}")
        if len(self.grid) == 0:
            raise ConfigError("grid must be nonempty")
        if self.replicates < 1:
            raise ConfigError("replicates must be at least 1")
        if not 0.0 < self.alpha < 1.0:
            raise ConfigError("alpha must lie in (0, 1)")
        if self.m < 1 or self.N < 0:
            raise ConfigError("need m >= 1 and N >= 0")
        if not 0.0 < self.subsample <= 1.0:
            raise ConfigError("subsample must lie in (0, 1]")
        try:
            self.statistics = tuple(StatKind.parse(s).value for s in self.statistics)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if self.suite in ("calibration",) and not self.csv_path:
            raise ConfigError("the calibration suite needs a CSV source")
        return self


@dataclass(frozen=True)
class ResultRow:
    suite: str
    setting: str
    statistic: str
    grid_point: float
    replicate: int
    value: float
    reject: float
    runtime_seconds: float

    def key(self):
        return (self.setting, self.statistic, self.grid_point, self.replicate)


def task_seed(seed: int, *keys: int) -> int:
    return int(np.random.SeedSequence([seed, *keys]).generate_state(1)[0])


def _workers() -> int:
    try:
        return max(1, int(os.environ.get("DRCME_WORKERS", "1")))
    except ValueError:
        return 1


def _map(fn, tasks):
    if _workers() == 1 or len(tasks) == 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(_workers()) as pool:
        return list(pool.map(fn, tasks))


def _flatten_sorted(chunks):
    rows = [r for chunk in chunks for r in chunk]
    return sorted(rows, key=lambda r: (r.setting, r.statistic, r.grid_point, r.replicate))


# --------------------------------------------------------------------------
# oracle embeddings


class OracleEmbedding:
    """Empirical embedding of a large sample, used as ground truth.

    For scalar outcomes with more than ``exact_limit`` draws the sample is
    linearly binned onto a grid of ``bins`` points (spacing far below the
    bandwidth); the binned sample has the same mean and the kernel sums
    differ by ``O((spacing / bandwidth)^2)``.
    """

    def __init__(self, samples, kernel: KernelSpec, bins: int = 8192, exact_limit: int = 5000):
        Y = as_points(samples)
        self.kernel = kernel
        self.n = Y.shape[0]
        if Y.shape[1] == 1 and self.n > exact_limit:
            lo, hi = Y.min(), Y.max()
            grid = np.linspace(lo, hi, bins)
            pos = (Y[:, 0] - lo) / (grid[1] - grid[0])
            left = np.clip(np.floor(pos).astype(int), 0, bins - 2)
            frac = pos - left
            w = np.bincount(left, 1.0 - frac, bins) + np.bincount(left + 1, frac, bins)
            keep = w > 0
            self.points, self.weights = grid[keep, None], w[keep] / self.n
        else:
            self.points, self.weights = Y, np.full(self.n, 1.0 / self.n)
        self.self_term = float(self.weights @ gram(kernel, self.points) @ self.weights)

    def cross(self, Y) -> np.ndarray:
        """``<l(y, .), oracle>`` for every row ``y`` of ``Y``."""
        return gram(self.kernel, as_points(Y), self.points) @ self.weights


def embedding_error(emb: st.WeightedEmbedding, bank: st.OutcomeBank, oracle: OracleEmbedding) -> float:
    c = emb.dense(bank.n_train)
    Yb = np.vstack([bank.Y_train, bank.Y_test])
    sq = c @ bank.L @ c - 2.0 * c @ oracle.cross(Yb) + oracle.self_term
    return float(math.sqrt(max(sq, 0.0)))


CONVERGENCE_ESTIMATORS = (
    ("ipw", "Y(0)"),
    ("ipw", "Y(1)"),
    ("dr", "Y(0)"),
    ("dr", "Y(1)"),
    ("weighted", "Y(0)|T=1"),
    ("weighted", "Y(1)|T=0"),
    ("cme", "Y(0)|T=1"),
    ("cme", "Y(1)|T=0"),
    ("dr", "Y(0)|T=1"),
    ("dr", "Y(1)|T=0"),
)


def _targets():
    return {"Y(0)": (0, None), "Y(1)": (1, None), "Y(0)|T=1": (0, 1), "Y(1)|T=0": (1, 0)}


def build_oracles(config: ExperimentConfig):
    """Oracle embeddings for every convergence target, sharing one outcome kernel."""
    draws = {
        name: oracle_embedding_sample(config.dgp, t, config.n_oracle, given, seed=task_seed(config.seed, 99, t, 2 if given is None else given))
        for name, (t, given) in _targets().items()
    }
    rng = np.random.default_rng(task_seed(config.seed, 98))
    pooled = np.vstack([d[rng.choice(len(d), min(len(d), 1000), replace=False)] for d in draws.values()])
    kernel = KernelSpec.gaussian(median_heuristic(pooled))
    return kernel, {name: OracleEmbedding(d, kernel) for name, d in draws.items()}


def convergence_replicate(data: Dataset, outcome_kernel: KernelSpec, oracles: dict, seed: int, models=ModelConfig()):
    """Embedding errors of every estimator on one dataset; returns ``{(estimator, target): error}``."""
    rng = np.random.default_rng(seed)
    perm = rng.permutation(data.n)
    half = data.n // 2
    tr, te = np.sort(perm[:half]), np.sort(perm[half:])
    std = Standardizer.fit(data.X[tr])
    Xs = std.transform(data.X)
    train = Dataset(Xs[tr], data.T[tr], data.Y[tr])
    test = Dataset(Xs[te], data.T[te], data.Y[te])
    ck = KernelSpec.gaussian(median_heuristic(Xs))
    prop = fit_logistic(train.X, train.T, ridge=models.logistic_ridge, clip_delta=models.clip_delta)
    K = gram(ck, train.X)
    cmes = {t: fit_cme(train.X, train.T, t, ck, models.cme_lambda, gram_matrix=K) for t in (0, 1)}
    bank = st.OutcomeBank(train.Y, test.Y, outcome_kernel)
    out = {}
    for est, target in CONVERGENCE_ESTIMATORS:
        t, given = _targets()[target]
        if given is None:
            emb = st.ipw_embedding(test, prop, t) if est == "ipw" else st.dr_embedding(test, prop, cmes[t], t)
        elif est == "weighted":
            emb = st.dett_embedding_weighted(test, prop, t, given, "count")
        elif est == "cme":
            emb = st.dett_embedding_cme(test, cmes[t], t, given)
        else:
            emb = st.dr_ett_embedding(test, prop, cmes[t], t, given)
        out[(est, target)] = embedding_error(emb, bank, oracles[target])
    return out


def _convergence_task(args):
    config, gi, n, rep, kernel, oracles = args
    t0 = time.perf_counter()
    seed = task_seed(config.seed, gi, rep)
    data = generate(replace(config.dgp, n=int(n), seed=seed))
    errs = convergence_replicate(data, kernel, oracles, seed + 1, config.models)
    dt = time.perf_counter() - t0
    return [
        ResultRow("fit_convergence", target, est, float(n), rep, err, float("nan"), dt)
        for (est, target), err in errs.items()
    ]


def run_fit_convergence(config: ExperimentConfig) -> list:
    config.validate()
    kernel, oracles = build_oracles(config)
    tasks = [(config, gi, n, rep, kernel, oracles) for gi, n in enumerate(config.grid) for rep in range(config.replicates)]
    return _flatten_sorted(_map(_convergence_task, tasks))


# --------------------------------------------------------------------------
# permutation-test suites


def _test_rows(suite, setting, grid_point, rep, data, config, seed):
    t0 = time.perf_counter()
    results = run_permutation_tests(
        data, [StatisticConfig(s) for s in config.statistics], N=config.N, m=config.m, ratio=config.ratio, seed=seed, models=config.models
    )
    dt = time.perf_counter() - t0
    return [
        ResultRow(suite, setting, name, float(grid_point), rep, r.p_value, float(r.p_value <= config.alpha), dt)
        for name, r in results.items()
    ]


def _power_task(args):
    config, zi, z, gi, beta, rep = args
    seed = task_seed(config.seed, zi, gi, rep)
    spec = replace(config.dgp, family=DGP_EFFECT, beta=float(beta), z_mode=z, seed=seed)
    return _test_rows("power_curve", f"z={z}", beta, rep, generate(spec), config, seed + 1)


def run_power_curve(config: ExperimentConfig) -> list:
    config.validate()
    tasks = [
        (config, zi, z, gi, beta, rep)
        for zi, z in enumerate(config.z_modes)
        for gi, beta in enumerate(config.grid)
        for rep in range(config.replicates)
    ]
    return _flatten_sorted(_map(_power_task, tasks))


def null_world(data: Dataset) -> Dataset:
    """Overwrite outcomes so that ``Y(1) = Y(0) = Y0`` on every row."""
    if not data.has_counterfactuals:
        raise ConfigError("null-world construction needs counterfactual columns")
    return Dataset(data.X, data.T, data.Y0, data.Y0, data.Y0, data.true_e, dict(data.meta))


def load_csv_source(config: ExperimentConfig) -> Dataset:
    schema = dict(config.csv_schema)
    return load_counterfactual_csv(config.csv_path, **schema)


def _calibration_task(args):
    config, data, hyp, rep = args
    # H0 and H1 replicates share a seed, so each pair sees the same rows and permutations
    seed = task_seed(config.seed, rep)
    rng = np.random.default_rng(seed)
    if config.subsample < 1.0:
        k = max(4, int(round(config.subsample * data.n)))
        data = data.subset(np.sort(rng.choice(data.n, k, replace=False)))
    world = null_world(data) if hyp == "H0" else data
    return _test_rows("calibration", hyp, 0.0, rep, world, config, seed + 1)


def run_calibration_csv(config: ExperimentConfig, data: Dataset | None = None) -> list:
    config.validate()
    data = load_csv_source(config) if data is None else data
    if not data.has_counterfactuals:
        raise ConfigError("calibration needs y0 and y1 columns")
    tasks = [(config, data, hyp, rep) for hyp in ("H0", "H1") for rep in range(config.replicates)]
    return _flatten_sorted(_map(_calibration_task, tasks))


def run_single_test(config: ExperimentConfig, data: Dataset | None = None) -> dict:
    config.validate()
    if data is None:
        data = load_csv_source(config) if config.csv_path else generate(replace(config.dgp, seed=config.seed))
    return run_permutation_tests(
        data, [StatisticConfig(s) for s in config.statistics], N=config.N, m=config.m, ratio=config.ratio, seed=config.seed, models=config.models
    )


# --------------------------------------------------------------------------
# tables


def summarize(rows) -> list:
    """One summary line per (suite, setting, statistic, grid point).

    For test suites ``mean`` is the rejection rate and ``se`` its binomial
    standard error; for convergence rows they describe the embedding error.
    """
    groups = {}
    for r in rows:
        groups.setdefault((r.suite, r.setting, r.statistic, r.grid_point), []).append(r)
    out = []
    for (suite, setting, stat, gp), rs in sorted(groups.items()):
        if suite == "fit_convergence":
            v = np.array([r.value for r in rs])
            mean, se = float(v.mean()), float(v.std(ddof=1) / math.sqrt(v.size)) if v.size > 1 else 0.0
            med = float(np.median(v))
        else:
            flags = np.array([r.reject for r in rs])
            mean = float(flags.mean())
            se = float(math.sqrt(mean * (1.0 - mean) / flags.size))
            med = float(np.median([r.value for r in rs]))
        out.append({"suite": suite, "setting": setting, "statistic": stat, "grid_point": gp, "count": len(rs), "mean": mean, "se": se, "median": med})
    return out


def write_rows(rows, path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(ROW_FIELDS)
        for r in rows:
            w.writerow([r.suite, r.setting, r.statistic, repr(r.grid_point), r.replicate, repr(r.value), repr(r.reject), repr(r.runtime_seconds)])


def read_rows(path) -> list:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != ROW_FIELDS:
            raise ValueError(f"{path}: unexpected header {reader.fieldnames}")
        return [
            ResultRow(d["suite"], d["setting"], d["statistic"], float(d["grid_point"]), int(d["replicate"]), float(d["value"]), float(d["reject"]), float(d["runtime_seconds"]))
            for d in reader
        ]


def write_summary(summary, path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=SUMMARY_FIELDS)
        w.writeheader()
        for s in summary:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in s.items()})


def write_outputs(rows, output_dir, suite: str):
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_rows(rows, out / f"{suite}.csv")
    summary = summarize(rows)
    write_summary(summary, out / f"{suite}_summary.csv")
    return summary

