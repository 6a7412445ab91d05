"""Synthetic data-generating processes with counterfactual ground truth, and
CSV ingestion of counterfactual-complete datasets.

Three families are provided:

``dgp_a_confounded``
    ``X ~ N(0, I_9)``, squared-sigmoid propensity centred on ``p_offset``,
    ``Y = b'X + beta*T + eps``.
``dgp_b_randomized``
    ``T ~ Ber(treat_prob)``, ``X ~ N(0, (1 + alpha*T) I_10)``,
    ``Y = f_T(X) + eps`` with ``f_0(x) = x_1`` and ``f_1(x) = x_1**2``.
``dgp_effect``
    ``X ~ N(0, I_9)``, ``e(x) = 1 / (1 + exp(a'x))``,
    ``Y = b'X + beta*(2Z - 1)*T + eps`` with ``Z`` one of ``1``,
    ``Ber(1/2)`` or ``Unif[0, 1]``.
"""

from __future__ import annotations

import csv
import functools
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.special import expit

DGP_A = "dgp_a_confounded"
DGP_B = "dgp_b_randomized"
DGP_EFFECT = "dgp_effect"
FAMILIES = (DGP_A, DGP_B, DGP_EFFECT)
Z_MODES = ("one", "bernoulli", "uniform")

DEFAULT_A = (0.1, 0.2, 0.3, 0.4, 0.5, 0.1, 0.2, 0.3, 0.4)
DEFAULT_B = (0.5, 0.4, 0.3, 0.2, 0.1, 0.4, 0.3, 0.2, 0.1)

PROPENSITY_CLAMP = (0.005, 0.995)
TRIM_BOUNDS = (0.03, 0.97)

_CENTERING_DRAWS = 1_000_000
_CENTERING_SEED = 20240917


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class Dataset:
    X: np.ndarray
    T: np.ndarray
    Y: np.ndarray
    Y0: np.ndarray | None = None
    Y1: np.ndarray | None = None
    true_e: np.ndarray | None = None
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        X = np.asarray(self.X, dtype=np.float64)
        n = X.shape[0]
        X = X.reshape(n, -1) if X.size else np.zeros((n, 0))
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "T", np.asarray(self.T).astype(np.int8).ravel())
        object.__setattr__(self, "Y", _as_outcome(self.Y, n))
        for name in ("Y0", "Y1"):
            val = getattr(self, name)
            if val is not None:
                object.__setattr__(self, name, _as_outcome(val, n))
        if self.true_e is not None:
            object.__setattr__(self, "true_e", np.asarray(self.true_e, dtype=np.float64).ravel())
        if self.T.shape[0] != n:
            raise DataError(f"T has {self.T.shape[0]} rows, X has {n}")
        if not np.all((self.T == 0) | (self.T == 1)):
            raise DataError("treatment must be binary")

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def has_counterfactuals(self) -> bool:
        return self.Y0 is not None and self.Y1 is not None

    def count(self, t: int) -> int:
        return int(np.sum(self.T == t))

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.intp)
        pick = lambda a: None if a is None else a[idx]  # noqa: E731
        return Dataset(
            self.X[idx], self.T[idx], self.Y[idx], pick(self.Y0), pick(self.Y1), pick(self.true_e), dict(self.meta)
        )

    def with_treatment(self, T) -> "Dataset":
        """Same covariates and outcomes, relabelled treatment."""
        return replace(self, T=np.asarray(T))

    def consistent(self) -> bool:
        if not self.has_counterfactuals:
            return True
        expect = np.where(self.T[:, None] == 1, self.Y1, self.Y0)
        return bool(np.array_equal(expect, self.Y))


def _as_outcome(Y, n):
    Y = np.asarray(Y, dtype=np.float64)
    return Y.reshape(n, -1)


@dataclass(frozen=True)
class DgpSpec:
    family: str = DGP_A
    n: int = 1000
    seed: int = 0
    a: tuple = DEFAULT_A
    b: tuple = DEFAULT_B
    sigma: float = 0.2
    beta: float = 3.0
    alpha: float = 0.3
    sigma_prime: float = 0.2
    treat_prob: float = 0.5
    z_mode: str = "one"
    p_offset: float = 0.5

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown DGP family {self.family!r}")
        if self.family in (DGP_A, DGP_EFFECT) and (len(self.a) != 9 or len(self.b) != 9):
            raise ValueError("a and b must have 9 entries")
        if self.z_mode not in Z_MODES:
            raise ValueError(f"z_mode must be one of {Z_MODES}")
        if self.n < 1:
            raise ValueError("n must be positive")


@functools.lru_cache(maxsize=16)
def centering_constant(a: tuple) -> float:
    """Monte Carlo estimate of ``E[(1 + exp(a'X))^-2]`` under ``X ~ N(0, I)``."""
    rng = np.random.default_rng(_CENTERING_SEED)
    av = np.asarray(a, dtype=np.float64)
    total = 0.0
    chunk = 200_000
    for _ in range(_CENTERING_DRAWS // chunk):
        X = rng.standard_normal((chunk, av.size))
        total += np.sum(expit(-(X @ av)) ** 2)
    return total / _CENTERING_DRAWS


def dgp_a_propensity(X, a=DEFAULT_A, p_offset=0.5):
    """True propensity of the confounded DGP; returns ``(clamped, raw)``."""
    raw = expit(-(np.asarray(X) @ np.asarray(a))) ** 2 - centering_constant(tuple(a)) + p_offset
    return np.clip(raw, *PROPENSITY_CLAMP), raw


def clamp_rate(raw) -> float:
    lo, hi = PROPENSITY_CLAMP
    raw = np.asarray(raw)
    return float(np.mean((raw < lo) | (raw > hi)))


def generate_dgp_a(spec: DgpSpec) -> Dataset:
    if spec.family != DGP_A:
        raise ValueError("spec is not a dgp_a_confounded spec")
    rng = np.random.default_rng(spec.seed)
    X = rng.standard_normal((spec.n, 9))
    e, raw = dgp_a_propensity(X, spec.a, spec.p_offset)
    T = (rng.random(spec.n) < e).astype(np.int8)
    eps = spec.sigma * rng.standard_normal(spec.n)
    base = X @ np.asarray(spec.b) + eps
    Y0, Y1 = base, base + spec.beta
    Y = np.where(T == 1, Y1, Y0)
    return Dataset(X, T, Y, Y0, Y1, e, {"family": DGP_A, "clamp_rate": clamp_rate(raw)})


def generate_dgp_b(spec: DgpSpec) -> Dataset:
    if spec.family != DGP_B:
        raise ValueError("spec is not a dgp_b_randomized spec")
    rng = np.random.default_rng(spec.seed)
    T = (rng.random(spec.n) < spec.treat_prob).astype(np.int8)
    Z = rng.standard_normal((spec.n, 10))
    X = Z * np.sqrt(1.0 + spec.alpha * T)[:, None]
    eps = spec.sigma_prime * rng.standard_normal(spec.n)
    Y0 = X[:, 0] + eps
    Y1 = X[:, 0] ** 2 + eps
    Y = np.where(T == 1, Y1, Y0)
    # X depends on T here, so P(T=1 | X) is not treat_prob; it is left unset
    return Dataset(X, T, Y, Y0, Y1, None, {"family": DGP_B})


def _z_multiplier(mode, rng, n):
    # one uniform draw per row in every mode keeps the noise stream aligned across modes
    u = rng.random(n)
    if mode == "one":
        return np.ones(n)
    if mode == "bernoulli":
        return 2.0 * (u < 0.5) - 1.0
    return 2.0 * u - 1.0


def generate_dgp_effect(spec: DgpSpec) -> Dataset:
    if spec.family != DGP_EFFECT:
        raise ValueError("spec is not a dgp_effect spec")
    rng = np.random.default_rng(spec.seed)
    X = rng.standard_normal((spec.n, 9))
    e = expit(-(X @ np.asarray(spec.a)))
    T = (rng.random(spec.n) < e).astype(np.int8)
    mult = _z_multiplier(spec.z_mode, rng, spec.n)
    eps = spec.sigma * rng.standard_normal(spec.n)
    Y0 = X @ np.asarray(spec.b) + eps
    Y1 = Y0 + spec.beta * mult
    Y = np.where(T == 1, Y1, Y0)
    return Dataset(X, T, Y, Y0, Y1, e, {"family": DGP_EFFECT, "z_mode": spec.z_mode})


_GENERATORS = {DGP_A: generate_dgp_a, DGP_B: generate_dgp_b, DGP_EFFECT: generate_dgp_effect}


def generate(spec: DgpSpec) -> Dataset:
    return _GENERATORS[spec.family](spec)


def oracle_embedding_sample(spec: DgpSpec, t: int, n_oracle: int, given_treatment: int | None = None, seed=None):
    """``n_oracle`` i.i.d. draws of ``Y(t)``, optionally among units with ``T = given_treatment``.

    The draws come from a stream independent of ``spec.seed`` unless ``seed``
    is given.
    """
    if seed is None:
        seed = np.random.SeedSequence([spec.seed, 7919, t, 2 if given_treatment is None else given_treatment])
        seed = int(seed.generate_state(1)[0])
    draws = []
    have = 0
    batch = n_oracle if given_treatment is None else max(2 * n_oracle, 1000)
    k = 0
    while have < n_oracle:
        data = generate(replace(spec, n=batch, seed=seed + k))
        k += 1
        Yt = data.Y1 if t == 1 else data.Y0
        if given_treatment is not None:
            Yt = Yt[data.T == given_treatment]
        draws.append(Yt)
        have += Yt.shape[0]
    return np.concatenate(draws)[:n_oracle]


def load_counterfactual_csv(
    path,
    *,
    treatment: str = "t",
    outcomes=("y",),
    y0=None,
    y1=None,
    propensity: str | None = None,
    covariates=None,
    exclude=(),
    trim: bool = False,
) -> Dataset:
    """Read a dataset from a headed CSV file.

    Every column not named as treatment, outcome, counterfactual, propensity
    or in ``exclude`` is a covariate unless ``covariates`` lists them
    explicitly. With ``trim=True`` and a propensity column, rows whose stated
    propensity falls outside ``[0.03, 0.97]`` are dropped.
    """
    outcomes = [outcomes] if isinstance(outcomes, str) else list(outcomes)
    y0 = [y0] if isinstance(y0, str) else (list(y0) if y0 else None)
    y1 = [y1] if isinstance(y1, str) else (list(y1) if y1 else None)
    if (y0 is None) != (y1 is None):
        raise DataError("give both counterfactual columns or neither")
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        rows = list(reader)
    named = [treatment, *outcomes, *(y0 or []), *(y1 or [])] + ([propensity] if propensity else [])
    if covariates is None:
        covariates = [h for h in header if h not in named and h not in set(exclude)]
    missing = [c for c in named + list(covariates) if c not in header]
    if missing:
        raise DataError(f"{path}: missing columns {missing}")
    col = {h: i for i, h in enumerate(header)}
    wanted = named + list(covariates)
    values = np.empty((len(rows), len(wanted)))
    for r, row in enumerate(rows):
        line = r + 2
        if len(row) != len(header):
            raise DataError(f"{path}: row {line} has {len(row)} fields, expected {len(header)}")
        for c, name in enumerate(wanted):
            cell = row[col[name]].strip()
            try:
                v = float(cell)
            except ValueError:
                raise DataError(f"{path}: row {line}, column {name!r}: non-numeric value {cell!r}") from None
            if not math.isfinite(v):
                raise DataError(f"{path}: row {line}, column {name!r}: non-finite value")
            values[r, c] = v
    pos = {name: i for i, name in enumerate(wanted)}
    T = values[:, pos[treatment]]
    bad = np.flatnonzero((T != 0) & (T != 1))
    if bad.size:
        raise DataError(f"{path}: row {bad[0] + 2}: treatment value {T[bad[0]]:g} not in {{0, 1}}")
    get = lambda names: values[:, [pos[c] for c in names]]  # noqa: E731
    e = values[:, pos[propensity]] if propensity else None
    data = Dataset(
        get(covariates),
        T,
        get(outcomes),
        get(y0) if y0 else None,
        get(y1) if y1 else None,
        e,
        {"source": str(path), "covariates": list(covariates), "outcomes": outcomes},
    )
    if trim and e is not None:
        lo, hi = TRIM_BOUNDS
        keep = np.flatnonzero((e >= lo) & (e <= hi))
        data = data.subset(keep)
        data.meta["trimmed"] = int(len(rows) - keep.size)
    return data


def write_csv(data: Dataset, path, covariate_names=None) -> None:
    """Write a dataset in the layout :func:`load_counterfactual_csv` reads by default.

    ``path`` may also be an open text stream.
    """
    d = data.X.shape[1]
    names = covariate_names or [f"x{i + 1}" for i in range(d)]
    p = data.Y.shape[1]
    suffix = [""] if p == 1 else [str(j + 1) for j in range(p)]
    header = list(names) + ["t"] + [f"y{s}" for s in suffix]
    cols = [data.X, data.T[:, None], data.Y]
    if data.has_counterfactuals:
        header += [f"y0{s}" for s in suffix] + [f"y1{s}" for s in suffix]
        cols += [data.Y0, data.Y1]
    if data.true_e is not None:
        header.append("e")
        cols.append(data.true_e[:, None])
    table = np.hstack([np.asarray(c, dtype=np.float64) for c in cols])
    if hasattr(path, "write"):
        _write_table(path, header, table, d)
    else:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            _write_table(fh, header, table, d)


def _write_table(fh, header, table, tcol):
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(header)
    for row in table:
        out = [repr(float(v)) for v in row]
        out[tcol] = str(int(row[tcol]))
        w.writerow(out)
