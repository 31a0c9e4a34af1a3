import numpy as np
import pytest

from dpsynth import LabeledTable
from dpsynth.metrics.utility import MissingClassWarning, SoftmaxRegression, train_eval
from conftest import two_cluster


def test_separable_toy_accuracy_one():
    tr, te = two_cluster(gap=20.0, seed=0), two_cluster(gap=20.0, seed=1)
    assert train_eval(tr, te) == 1.0


def test_memorizable_toy_beats_majority(rng):
    X = rng.normal(size=(60, 5))
    y = np.r_[np.zeros(40, int), np.ones(20, int)]
    t = LabeledTable(X, y)
    assert train_eval(t, t) >= 40 / 60


def test_single_class_training_is_constant_predictor():
    tr = LabeledTable(np.arange(6.0).reshape(3, 2), [1, 1, 1], class_names=["a", "b"])
    te = LabeledTable(np.zeros((4, 2)), [0, 1, 1, 1], class_names=["a", "b"])
    with pytest.warns(MissingClassWarning):
        assert train_eval(tr, te) == 0.75


def test_label_permutation_invariance():
    tr, te = two_cluster(gap=1.5, seed=0), two_cluster(gap=1.5, seed=1)
    perm = np.array([1, 0])
    tr2 = LabeledTable(tr.features, perm[tr.labels])
    te2 = LabeledTable(te.features, perm[te.labels])
    assert train_eval(tr, te) == pytest.approx(train_eval(tr2, te2))


def test_convex_objective_same_loss_from_two_inits(rng):
    X = rng.normal(size=(200, 4))
    y = (X @ np.array([1.0, -1.0, 0.5, 0.0]) + rng.normal(0, 0.5, 200) > 0).astype(int)
    a = SoftmaxRegression(init="random", random_state=1).fit(X, y)
    b = SoftmaxRegression(init="random", random_state=2).fit(X, y)
    assert abs(a.loss_curve_[-1] - b.loss_curve_[-1]) < 1e-6


def test_loss_curve_non_increasing(rng):
    X = rng.normal(size=(100, 3))
    y = rng.integers(0, 3, 100)
    clf = SoftmaxRegression().fit(X, y)
    assert np.all(np.diff(clf.loss_curve_) <= 0)


def test_matches_sklearn_logistic_regression(rng):
    """Same penalized objective solved by an independent solver."""
    from sklearn.linear_model import LogisticRegression

    X = rng.normal(size=(300, 3))
    y = rng.integers(0, 3, 300)
    X[y == 1] += 1.0
    ours = SoftmaxRegression(l2=1e-2, max_iter=5000, tol=1e-10).fit(X, y)
    # sklearn minimizes |W|^2/2 + C * sum CE; matching means C = 1 / (n * l2)
    ref = LogisticRegression(C=1.0 / (300 * 1e-2), tol=1e-12, max_iter=10_000).fit(X, y)
    P = ours.predict_proba(X)
    np.testing.assert_allclose(P, ref.predict_proba(X), atol=1e-5)


def test_accuracy_in_unit_interval(rng):
    tr = LabeledTable(rng.normal(size=(50, 3)), rng.integers(0, 3, 50))
    te = LabeledTable(rng.normal(size=(30, 3)), rng.integers(0, 3, 30))
    assert 0.0 <= train_eval(tr, te) <= 1.0
