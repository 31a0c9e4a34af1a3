"""Machine-learning efficacy: train on one table, score accuracy on another."""
from __future__ import annotations

import logging
import warnings

import numpy as np
from scipy.special import logsumexp
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from ..dataset import LabeledTable, Standardizer

logger = logging.getLogger(__name__)


class MissingClassWarning(UserWarning):
    pass


class SoftmaxRegression(ClassifierMixin, BaseEstimator):
    """Multinomial logistic regression by full-batch gradient descent.

    Minimizes mean cross-entropy plus ``l2 / 2 * |W|^2`` (bias unpenalized)
    with an Armijo backtracking line search, so the objective never
    increases between iterations.
    """

    def __init__(self, l2=1e-4, max_iter=2000, tol=1e-6, learning_rate=1.0, n_classes=None, init="zeros", random_state=None):
        self.l2 = l2
        self.max_iter = max_iter
        self.tol = tol
        self.learning_rate = learning_rate
        self.n_classes = n_classes
        self.init = init
        self.random_state = random_state

    def _objective(self, W, b, X, Y):
        logits = X @ W + b
        lse = logsumexp(logits, axis=1)
        loss = np.mean(lse - np.sum(logits * Y, axis=1)) + 0.5 * self.l2 * np.sum(W * W)
        P = np.exp(logits - lse[:, None])
        G = (P - Y) / X.shape[0]
        return loss, X.T @ G + self.l2 * W, G.sum(axis=0)

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64)
        y = np.asarray(y, dtype=np.int64)
        C = self.n_classes or int(y.max()) + 1
        self.classes_ = np.arange(C)
        Y = np.zeros((y.size, C))
        Y[np.arange(y.size), y] = 1.0
        d = X.shape[1]
        if self.init == "random":
            rng = np.random.default_rng(self.random_state)
            W, b = rng.normal(0, 0.1, (d, C)), rng.normal(0, 0.1, C)
        else:
            W, b = np.zeros((d, C)), np.zeros(C)
        loss, gW, gb = self._objective(W, b, X, Y)
        step = self.learning_rate
        losses = [loss]
        for it in range(self.max_iter):
            gnorm2 = np.sum(gW * gW) + np.sum(gb * gb)
            if np.sqrt(gnorm2) < self.tol:
                break
            while True:
                W_new, b_new = W - step * gW, b - step * gb
                new_loss, ngW, ngb = self._objective(W_new, b_new, X, Y)
                if new_loss <= loss - 0.5 * step * gnorm2 or step < 1e-12:
                    break
                step *= 0.5
            if new_loss > loss:
                break
            W, b, loss, gW, gb = W_new, b_new, new_loss, ngW, ngb
            losses.append(loss)
            step = min(step * 2.0, 1e3)
        self.coef_ = W.T
        self.intercept_ = b
        self.n_iter_ = len(losses) - 1
        self.loss_curve_ = np.asarray(losses)
        self.n_features_in_ = d
        return self

    def decision_function(self, X):
        check_is_fitted(self, "coef_")
        X = check_array(X, dtype=np.float64)
        return X @ self.coef_.T + self.intercept_

    def predict_proba(self, X):
        s = self.decision_function(X)
        return np.exp(s - logsumexp(s, axis=1, keepdims=True))

    def predict(self, X):
        return self.classes_[np.argmax(self.decision_function(X), axis=1)]


def train_eval(train: LabeledTable, test: LabeledTable, **clf_params) -> float:
    """Accuracy on ``test`` of a classifier fit on ``train``.

    Both tables are standardized with the transform fit on ``train``.
    """
    C = max(train.n_classes, test.n_classes)
    present = np.unique(train.labels)
    if present.size < C:
        warnings.warn(f"training table covers {present.size} of {C} classes", MissingClassWarning, stacklevel=2)
    if present.size == 1:
        pred = np.full(test.n, present[0])
        return float(np.mean(pred == test.labels))
    scaler = Standardizer().fit(train.features)
    clf = SoftmaxRegression(n_classes=C, **clf_params)
    clf.fit(scaler.transform(train.features), train.labels)
    pred = clf.predict(scaler.transform(test.features))
    return float(np.mean(pred == test.labels))
