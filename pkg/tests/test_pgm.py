import math

import numpy as np
import pytest

from dpsynth import StarPGM
from dpsynth.generators.pgm import EmptyLabelCell, sample_star
from dpsynth.marginals import measure
from conftest import two_cluster


def codes_data(n=2000, d=4, n_classes=3, seed=0):
    r = np.random.default_rng(seed)
    y = r.integers(0, n_classes, n)
    X = np.minimum(r.poisson(1.0 + y[:, None], (n, d)), 3)
    return X, y


def test_infinite_epsilon_conditionals_are_empirical():
    X, y = codes_data()
    m = StarPGM(random_state=0).fit_discrete(X, y)
    for i, cond in enumerate(m.conditionals_):
        for c in range(3):
            emp = np.bincount(X[y == c, i], minlength=4) / np.sum(y == c)
            np.testing.assert_allclose(cond[:, c], emp, rtol=0, atol=1e-12)
    np.testing.assert_allclose(m.label_marginal_, np.bincount(y) / y.size, atol=1e-12)


def test_budget_split_uniform():
    X, y = codes_data(d=5)
    m = StarPGM(epsilon=2.2, delta=1e-5, random_state=0).fit_discrete(X, y)
    assert m.measurement_epsilon_ == pytest.approx(2.2 / 11)
    assert m.measurement_delta_ == pytest.approx(1e-5 / 11)
    assert m.epsilon_spent_ <= 2.2 * (1 + 1e-12)


def test_deterministic_conditional_single_feature():
    y = np.repeat([0, 1, 2, 3], 50)
    X = y[:, None].copy()
    m = StarPGM(random_state=0).fit_discrete(X, y)
    codes, ys = m.sample_discrete(1000, random_state=1)
    np.testing.assert_array_equal(codes[:, 0], ys)


def test_sample_star_one_hot_conditional(rng):
    cond = np.array([[1.0, 0.2], [0.0, 0.3], [0.0, 0.3], [0.0, 0.2]])
    codes, y = sample_star([0.5, 0.5], [cond], 2000, rng)
    assert np.all(codes[y == 0, 0] == 0)
    assert set(np.unique(codes[y == 1, 0])) == {0, 1, 2, 3}


def test_large_sample_reproduces_marginals():
    X, y = codes_data()
    m = StarPGM(random_state=0).fit_discrete(X, y)
    codes, ys = m.sample_discrete(100_000, random_state=2)
    data = np.column_stack([codes, ys])
    for target in m.marginals_:
        got = measure(data, target.clique, m.measurement_set_.domain).probs
        assert 0.5 * np.abs(got - target.probs).sum() <= 0.02


def test_conditional_independence_given_label():
    X, y = codes_data()
    m = StarPGM(random_state=0).fit_discrete(X, y)
    codes, ys = m.sample_discrete(100_000, random_state=3)
    sel = codes[ys == 1]
    r = np.corrcoef(sel[:, 0], sel[:, 1])[0, 1]
    assert abs(r) < 0.05


def test_empty_label_column_warns_and_is_uniform():
    X, y = codes_data(n_classes=2)
    with pytest.warns(EmptyLabelCell):
        m = StarPGM(n_classes=3, random_state=0).fit_discrete(X, y)
    for cond in m.conditionals_:
        np.testing.assert_allclose(cond[:, 2], 0.25)


def test_fit_on_continuous_table_and_determinism():
    t = two_cluster()
    a = StarPGM(epsilon=1.0, random_state=5).fit_table(t)
    b = StarPGM(epsilon=1.0, random_state=5).fit_table(t)
    Xa, ya = a.sample(50, random_state=1)
    Xb, yb = b.sample(50, random_state=1)
    np.testing.assert_array_equal(Xa, Xb)
    np.testing.assert_array_equal(ya, yb)
    assert Xa.shape == (50, 2)
    assert math.isfinite(a.epsilon_spent_)


def test_noisy_conditionals_are_distributions():
    X, y = codes_data()
    m = StarPGM(epsilon=0.5, random_state=0).fit_discrete(X, y)
    for cond in m.conditionals_:
        assert np.all(cond >= 0)
        np.testing.assert_allclose(cond.sum(axis=0), 1.0)
