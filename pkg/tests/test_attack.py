import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra import numpy as hnp

from dpsynth.attack import auc_mann_whitney, blackbox_attack, nearest_distance
from dpsynth.exceptions import EmptySet


def test_memorized_members_auc_one(rng):
    members = rng.normal(size=(100, 5))
    far = rng.normal(10.0, 1.0, size=(100, 5))
    assert blackbox_attack(members.copy(), members, far).auc == 1.0


def test_identical_scores_auc_half():
    assert auc_mann_whitney(np.zeros(10), np.zeros(7)) == 0.5


def test_independent_redraw_near_chance():
    aucs = []
    for seed in range(5):
        r = np.random.default_rng(seed)
        synth, members, non = (r.normal(size=(500, 5)) for _ in range(3))
        aucs.append(blackbox_attack(synth, members, non).auc)
    assert all(0.45 <= a <= 0.55 for a in aucs)


def test_auc_matches_pair_counting(rng):
    pos, neg = np.round(rng.normal(0.5, 1, 40), 1), np.round(rng.normal(0, 1, 30), 1)
    brute = np.mean([(p > n) + 0.5 * (p == n) for p in pos for n in neg])
    assert auc_mann_whitney(pos, neg) == pytest.approx(brute, abs=1e-12)


scores = hnp.arrays(float, st.integers(1, 30), elements=st.floats(-100, 100))


@given(scores, scores)
def test_auc_swap_complement(pos, neg):
    assert auc_mann_whitney(pos, neg) + auc_mann_whitney(neg, pos) == pytest.approx(1.0)


int_scores = hnp.arrays(float, st.integers(1, 30), elements=st.integers(-100, 100).map(float))


@given(int_scores, int_scores)
def test_auc_monotone_transform_invariant(pos, neg):
    f = lambda x: np.arctan(x / 50.0) * 3 + 1  # noqa: E731  strictly increasing
    assert auc_mann_whitney(f(pos), f(neg)) == pytest.approx(auc_mann_whitney(pos, neg), abs=1e-12)


def test_score_is_negative_nearest_distance(rng):
    synth = rng.normal(size=(50, 3))
    members, non = rng.normal(size=(10, 3)), rng.normal(size=(12, 3))
    res = blackbox_attack(synth, members, non)
    mu, sd = synth.mean(0), synth.std(0)
    Q = (np.vstack([members, non]) - mu) / sd
    S = (synth - mu) / sd
    expect = -np.array([min(np.linalg.norm(q - s) for s in S) for q in Q])
    np.testing.assert_allclose(res.scores, expect, rtol=1e-12)
    assert res.member_flags.sum() == 10
    assert res.to_dict() == {"auc": res.auc, "n_members": 10, "n_nonmembers": 12}


def test_nearest_distance_chunked(rng):
    Q, R = rng.normal(size=(30, 4)), rng.normal(size=(20, 4))
    np.testing.assert_allclose(nearest_distance(Q, R, chunk=7), nearest_distance(Q, R))


def test_empty_sets_rejected():
    with pytest.raises(EmptySet):
        blackbox_attack(np.zeros((3, 2)), np.zeros((0, 2)), np.zeros((2, 2)))
    with pytest.raises(EmptySet):
        auc_mann_whitney([], [1.0])
