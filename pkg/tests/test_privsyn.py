import numpy as np
import pytest
from hypothesis import given, strategies as st

from dpsynth import PrivSyn
from dpsynth.generators.privsyn import apportion, synthesize
from dpsynth.marginals import MarginalTable, MeasurementSet, measure, measure_all


def star_sample(n=1000, d=5, n_classes=3, seed=0):
    """Records drawn exactly from a label-star model."""
    r = np.random.default_rng(seed)
    y = r.choice(n_classes, n, p=[0.5, 0.3, 0.2][:n_classes])
    cond = r.dirichlet(np.ones(4), size=(d, n_classes))
    X = np.empty((n, d), dtype=np.int64)
    for i in range(d):
        for c in range(n_classes):
            rows = y == c
            X[rows, i] = r.choice(4, rows.sum(), p=cond[i, c])
    return X, y


def test_budget_split_example():
    X, y = star_sample(d=4)
    m = PrivSyn(epsilon=9.0, random_state=0).fit_discrete(X, y)
    e = m.measurement_epsilons_
    assert e[:5].sum() == pytest.approx(1.0)
    assert e[5:].sum() == pytest.approx(8.0)
    np.testing.assert_allclose(e[5:], 8 * 9.0 / (9 * 4))
    assert m.epsilon_spent_ <= 9.0 * (1 + 1e-12)


def test_infinite_epsilon_marginals_exact():
    X, y = star_sample()
    m = PrivSyn(random_state=0).fit_discrete(X, y)
    exact = measure_all(np.column_stack([X, y]), m.measurement_set_)
    for a, b in zip(m.marginals_, exact):
        np.testing.assert_allclose(a.probs, b.probs, rtol=0, atol=1e-15)


def test_single_attribute_one_sweep():
    target = MarginalTable((0,), [0.5, 0.5])
    state = synthesize([target], (2,), 4, max_sweeps=1, init_records=np.zeros((4, 1), int), rng=0)
    np.testing.assert_array_equal(np.bincount(state.records[:, 0], minlength=2), [2, 2])
    assert state.mean_l1 == 0.0


def test_infinite_tol_returns_initialization():
    init = np.array([[0, 1], [1, 1], [0, 0]])
    targets = [MarginalTable((0, 1), np.full((2, 2), 0.25))]
    state = synthesize(targets, (2, 2), 3, tol=np.inf, init_records=init, rng=0)
    np.testing.assert_array_equal(state.records, init)
    assert state.sweeps == 0


def test_realizable_targets_converge():
    X, y = star_sample()
    data = np.column_stack([X, y])
    mset = MeasurementSet.star(X.shape[1], 3, 4)
    targets = measure_all(data, mset)
    state = synthesize(targets, mset.domain, len(data), rng=1, label_attr=mset.label_attr)
    assert state.mean_l1 <= 0.05


@given(st.integers(0, 1000))
def test_l1_non_increasing_and_domain_valid(seed):
    r = np.random.default_rng(seed)
    mset = MeasurementSet.star(3, 2, 4)
    # arbitrary (possibly inconsistent) targets
    targets = [MarginalTable(c, r.dirichlet(np.ones(int(np.prod([mset.domain[a] for a in c])))).reshape([mset.domain[a] for a in c])) for c in mset.cliques]
    state = synthesize(targets, mset.domain, 60, max_sweeps=20, rng=seed, label_attr=mset.label_attr)
    h = np.asarray(state.history)
    assert np.all(np.diff(h) <= 1e-12)
    assert np.all(state.records >= 0)
    assert np.all(state.records < np.asarray(mset.domain))


def test_label_counts_follow_label_marginal():
    X, y = star_sample(n=600)
    m = PrivSyn(random_state=0).fit_discrete(X, y)
    codes, ys = m.sample_discrete(600, random_state=1)
    np.testing.assert_array_equal(np.bincount(ys, minlength=3), apportion(m.marginals_[X.shape[1]].probs, 600))
    assert codes.shape == (600, X.shape[1])


@given(st.lists(st.floats(0, 1), min_size=1, max_size=8), st.integers(1, 500))
def test_apportion_sums_to_n(p, n):
    out = apportion(p, n)
    assert out.sum() == n
    assert np.all(out >= 0)


def test_sample_deterministic():
    X, y = star_sample(n=300)
    m = PrivSyn(epsilon=2.0, random_state=0).fit_discrete(X, y)
    a = m.sample_discrete(100, random_state=4)
    b = m.sample_discrete(100, random_state=4)
    np.testing.assert_array_equal(a[0], b[0])
    np.testing.assert_array_equal(a[1], b[1])
