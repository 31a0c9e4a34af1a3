"""Private-PGM on the label-star measurement set.

With all singletons plus every (feature, label) pair measured, the graphical
model is a tree rooted at the label, so the maximum-likelihood fit reduces
to ``P(y) * prod_i P(x_i | y)`` read off the repaired marginals.
"""
from __future__ import annotations

import json
import math
import warnings

import numpy as np
from sklearn.utils.validation import check_is_fitted

from ..dataset import N_BINS, QuantileBinner
from ..marginals import MeasurementSet, consensus_label, noisy_measurements, repair
from .base import SyntheticGenerator, as_rng, sample_labels

MODEL_VERSION = 1


class EmptyLabelCell(UserWarning):
    pass


def sample_star(label_marginal, conditionals, n, rng, labels=None):
    """Draw codes from ``P(y) prod_i P(x_i|y)``; ``conditionals[i]`` is (bins, C)."""
    y = sample_labels(label_marginal, n, rng) if labels is None else np.asarray(labels)
    d = len(conditionals)
    codes = np.empty((n, d), dtype=np.int64)
    u = rng.random((n, d))
    for i, cond in enumerate(conditionals):
        cdf = np.cumsum(cond[:, y].T, axis=1)
        cdf[:, -1] = 1.0
        codes[:, i] = (u[:, i : i + 1] >= cdf).sum(axis=1)
    return codes, y


class StarPGM(SyntheticGenerator):
    """Label-star graphical model from noisy 1-way and (feature, label) marginals.

    The budget is split uniformly over the ``2d + 1`` measurements, for both
    ``epsilon`` and ``delta``.
    """

    def __init__(self, epsilon=math.inf, delta=1e-5, n_classes=None, random_state=None):
        self.epsilon = epsilon
        self.delta = delta
        self.n_classes = n_classes
        self.random_state = random_state

    def fit(self, X, y):
        X, y = self._validate(X, y)
        self.binner_ = QuantileBinner().fit(X)
        return self.fit_discrete(self.binner_.transform(X), y)

    def fit_discrete(self, codes, y):
        rng = as_rng(self.random_state)
        codes = np.asarray(codes, dtype=np.int64)
        y = np.asarray(y, dtype=np.int64)
        if not hasattr(self, "n_classes_"):
            self.n_classes_ = self.n_classes or int(y.max()) + 1
            self.class_probs_ = np.bincount(y, minlength=self.n_classes_) / y.size
            self.n_features_in_ = codes.shape[1]
        d = codes.shape[1]
        mset = MeasurementSet.star(d, self.n_classes_, N_BINS)
        k = len(mset.cliques)
        self.measurement_epsilon_ = self.epsilon / k
        self.measurement_delta_ = self.delta / k
        data = np.column_stack([codes, y])
        noisy = noisy_measurements(data, mset, [self.measurement_epsilon_] * k, [self.measurement_delta_] * k, rng)
        self.marginals_ = repair(noisy, mset.label_attr)
        self.measurement_set_ = mset

        label = mset.label_attr
        self.label_marginal_ = consensus_label(self.marginals_, label)
        conds = []
        for m in self.marginals_:
            if len(m.clique) != 2:
                continue
            P = m.probs if m.clique[1] == label else m.probs.T
            col = P.sum(axis=0)
            cond = np.empty_like(P)
            for c in range(P.shape[1]):
                if col[c] > 0:
                    cond[:, c] = P[:, c] / col[c]
                else:
                    warnings.warn(f"label {c} has zero mass; uniform conditional", EmptyLabelCell, stacklevel=2)
                    cond[:, c] = 1.0 / P.shape[0]
            conds.append(cond)
        self.conditionals_ = conds
        self.epsilon_spent_ = math.fsum([self.measurement_epsilon_] * k) if math.isfinite(self.epsilon) else math.inf
        return self

    def sample_discrete(self, n, random_state=None, class_probs=None):
        check_is_fitted(self, "conditionals_")
        rng = as_rng(random_state)
        probs = self.label_marginal_ if class_probs is None else class_probs
        return sample_star(probs, self.conditionals_, n, rng)

    def sample(self, n, random_state=None, class_probs=None):
        codes, y = self.sample_discrete(n, random_state, class_probs)
        return self.binner_.inverse_transform(codes), y

    def to_dict(self) -> dict:
        check_is_fitted(self, "conditionals_")
        return {
            "version": MODEL_VERSION,
            "kind": "pgm",
            "label_marginal": self.label_marginal_.tolist(),
            "conditionals": [c.tolist() for c in self.conditionals_],
        }

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)
