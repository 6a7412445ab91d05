import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import expit

from drcme.datagen import Dataset
from drcme.matching import MatchingError, build_matched_sets, match_on_scores, split_sets
from drcme.propensity import PropensityModel


def as_lists(ms):
    return [s.tolist() for s in ms.sets]


def test_hand_trace_logits():
    T = np.array([1, 0, 0])
    ms = match_on_scores([1.39, 1.34, -1.39], T, scale="logit")
    assert as_lists(ms) == [[0, 1]]
    assert ms.unmatched.tolist() == [2]


def test_hand_trace_descending_order():
    # the default caliper (0.2 SD of the logits) would drop the 0.6 unit; the trace is uncalipered
    T = np.array([1, 1, 0, 0])
    ms = match_on_scores([0.8, 0.6, 0.79, 0.2], T, caliper=None)
    assert as_lists(ms) == [[0, 2], [1, 3]]
    assert ms.unmatched.size == 0


def test_greedy_order_matters():
    # the higher-scored treated unit claims the shared nearest control first
    T = np.array([1, 1, 0, 0])
    ms = match_on_scores([0.5, 0.3, 0.4, -2.0], T, caliper=None, scale="logit")
    assert as_lists(ms) == [[0, 2], [1, 3]]


def test_zero_caliper_fails():
    data = Dataset(np.array([[0.1], [0.5], [0.9], [1.3]]), np.array([1, 0, 1, 0]), np.zeros(4))
    prop = PropensityModel(np.array([1.0, 0.0]))
    with pytest.raises(MatchingError):
        build_matched_sets(data, prop, caliper=0.0)


def test_caliper_is_inclusive():
    ms = match_on_scores([1.0, 0.5], np.array([1, 0]), caliper=0.5, scale="logit")
    assert ms.n_sets == 1


def test_multiple_controls_per_set():
    T = np.array([1, 0, 0, 0, 1, 0])
    ms = match_on_scores([2.0, 1.9, 1.8, -1.0, -1.1, 0.0], T, caliper=None, controls_per_set=2, scale="logit")
    assert as_lists(ms) == [[0, 1, 2], [4, 3, 5]]
    for s in ms.sets:
        assert T[s].sum() == 1 and len(s) == 3


def random_sets(seed, n=60):
    rng = np.random.default_rng(seed)
    e = rng.uniform(0.05, 0.95, n)
    T = (rng.random(n) < e).astype(int)
    T[:2] = [0, 1]
    return e, T


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 100_000), st.integers(1, 3), st.sampled_from(["default", None, 0.3]))
def test_partition_invariants(seed, k, caliper):
    e, T = random_sets(seed)
    ms = match_on_scores(e, T, caliper=caliper, controls_per_set=k)
    members = np.concatenate([*ms.sets, ms.unmatched]) if ms.sets else ms.unmatched
    assert np.array_equal(np.sort(members), np.arange(T.size))
    for s in ms.sets:
        assert T[s].sum() == 1 and len(s) == k + 1
    # same sets on the probability and the logit scale
    ms2 = match_on_scores(np.log(e / (1 - e)), T, caliper=caliper, controls_per_set=k, scale="logit")
    assert as_lists(ms) == as_lists(ms2)


def test_invariant_to_monotone_transform_of_scores():
    e, T = random_sets(1)
    a = match_on_scores(e, T)
    b = match_on_scores(expit(np.log(e / (1 - e))), T)
    assert as_lists(a) == as_lists(b)


def test_split_counts_and_determinism():
    ms = match_on_scores([3.0, 2.9, 1.0, 0.9, -1.0, -1.1, -3.0, -3.1], np.tile([1, 0], 4), caliper=None, scale="logit")
    assert ms.n_sets == 4
    a = split_sets(ms, 0.5, seed=3)
    assert len(a.train_sets) == 2
    b = split_sets(ms, 0.5, seed=3)
    assert np.array_equal(a.train_sets, b.train_sets)
    assert sorted(np.r_[a.train_sets, a.test_sets].tolist()) == [0, 1, 2, 3]
    tr, te = set(a.indices(ms, "train")), set(a.indices(ms, "test"))
    assert not tr & te
    for s in ms.sets:
        assert set(s) <= tr or set(s) <= te


def test_split_frequency():
    scores = np.repeat(np.arange(10.0), 2) * 10
    ms = match_on_scores(scores, np.tile([1, 0], 10), caliper=None, scale="logit")
    assert ms.n_sets == 10
    counts = np.zeros(10)
    for seed in range(200):
        counts[split_sets(ms, 0.5, seed=seed).train_sets] += 1
    assert np.all(np.abs(counts / 200 - 0.5) <= 0.1)


def test_split_needs_two_sets():
    ms = match_on_scores([1.0, 1.0], np.array([1, 0]), caliper=None, scale="logit")
    with pytest.raises(MatchingError):
        split_sets(ms)
    with pytest.raises(ValueError):
        split_sets(match_on_scores([1, 1, 2, 2], np.array([1, 0, 1, 0]), caliper=None, scale="logit"), ratio=1.0)


def test_diagnostics_line():
    ms = match_on_scores([1.39, 1.34, -1.39], np.array([1, 0, 0]), caliper=0.25, scale="logit")
    assert ms.diagnostics() == "sets=1 unmatched=1 caliper=0.25"
