"""Greedy propensity matching into sets with one treated unit, and set-level
train/test splits."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logit

from drcme.datagen import Dataset
from drcme.propensity import PropensityModel

log = logging.getLogger(__name__)

DEFAULT_CALIPER_SD = 0.2


class MatchingError(RuntimeError):
    pass


@dataclass(frozen=True)
class MatchedSets:
    sets: tuple
    unmatched: np.ndarray
    caliper: float | None = None

    @property
    def n_sets(self) -> int:
        return len(self.sets)

    def matched_indices(self) -> np.ndarray:
        if not self.sets:
            return np.zeros(0, dtype=np.intp)
        return np.sort(np.concatenate(self.sets))

    def diagnostics(self) -> str:
        cal = "none" if self.caliper is None else f"{self.caliper:.4g}"
        return f"sets={self.n_sets} unmatched={self.unmatched.size} caliper={cal}"


@dataclass(frozen=True)
class FoldAssignment:
    train_sets: np.ndarray
    test_sets: np.ndarray
    ratio: float
    seed: int | None

    def indices(self, sets: MatchedSets, which: str) -> np.ndarray:
        pick = self.train_sets if which == "train" else self.test_sets
        return np.sort(np.concatenate([sets.sets[i] for i in pick]))


def default_caliper(scores_logit) -> float:
    return DEFAULT_CALIPER_SD * float(np.std(scores_logit))


def match_on_scores(scores, T, caliper="default", controls_per_set: int = 1, scale: str = "probability") -> MatchedSets:
    """Greedy nearest-neighbour matching without replacement on logit scores.

    Treated units are processed in descending score order; each takes its
    ``controls_per_set`` nearest remaining controls within ``caliper`` (logit
    units; ``None`` disables it, ``"default"`` is 0.2 SD of the logits).
    Treated units without enough in-caliper controls are left unmatched, as
    are unused controls.
    """
    T = np.asarray(T).ravel()
    s = np.asarray(scores, dtype=np.float64).ravel()
    if scale == "probability":
        s = logit(np.clip(s, 1e-15, 1 - 1e-15))
    elif scale != "logit":
        raise ValueError("scale must be 'probability' or 'logit'")
    if controls_per_set < 1:
        raise ValueError("controls_per_set must be positive")
    treated = np.flatnonzero(T == 1)
    controls = np.flatnonzero(T == 0)
    if treated.size == 0 or controls.size == 0:
        raise MatchingError("both arms must be nonempty to match")
    if caliper == "default":
        caliper = default_caliper(s)
    cal = math.inf if caliper is None else float(caliper)

    available = np.ones(controls.size, dtype=bool)
    cs = s[controls]
    order = treated[np.argsort(-s[treated], kind="stable")]
    sets, unmatched = [], []
    for i in order:
        cand = np.flatnonzero(available)
        if cand.size < controls_per_set:
            unmatched.append(i)
            continue
        dist = np.abs(cs[cand] - s[i])
        near = cand[np.argsort(dist, kind="stable")[:controls_per_set]]
        if np.abs(cs[near] - s[i]).max() > cal:
            unmatched.append(i)
            continue
        available[near] = False
        sets.append(np.concatenate([[i], np.sort(controls[near])]).astype(np.intp))
    unmatched = np.sort(np.concatenate([np.asarray(unmatched, dtype=np.intp), controls[available]]))
    result = MatchedSets(tuple(sets), unmatched, None if caliper is None else cal)
    log.info("matching: %s", result.diagnostics())
    return result


def build_matched_sets(
    data: Dataset, prop: PropensityModel, caliper="default", controls_per_set: int = 1
) -> MatchedSets:
    result = match_on_scores(prop.logit(data.X), data.T, caliper, controls_per_set, scale="logit")
    if result.n_sets == 0:
        raise MatchingError(f"no matched sets could be formed ({result.diagnostics()})")
    return result


def split_sets(sets: MatchedSets, ratio: float = 0.5, seed=None) -> FoldAssignment:
    """Assign ``ceil(ratio * n_sets)`` whole sets to train, uniformly at random."""
    k = sets.n_sets
    if k < 2:
        raise MatchingError("need at least two matched sets to split")
    if not 0.0 < ratio < 1.0:
        raise ValueError("ratio must lie in (0, 1)")
    n_train = min(max(math.ceil(ratio * k), 1), k - 1)
    rng = np.random.default_rng(seed)
    perm = rng.permutation(k)
    return FoldAssignment(np.sort(perm[:n_train]), np.sort(perm[n_train:]), ratio, seed if isinstance(seed, int) else None)
