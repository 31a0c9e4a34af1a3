from __future__ import annotations

import math
from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted, check_X_y

from ..dataset import LabeledTable
from ..privacy import PrivacySpec


def as_rng(random_state) -> np.random.Generator:
    if isinstance(random_state, np.random.Generator):
        return random_state
    return np.random.default_rng(random_state)


def sample_labels(class_probs, n: int, rng: np.random.Generator) -> np.ndarray:
    p = np.asarray(class_probs, dtype=float)
    p = p / p.sum()
    return rng.choice(p.size, size=n, p=p)


class SyntheticGenerator(BaseEstimator):
    """Common surface of all generators.

    ``fit(X, y)`` trains on continuous features and integer labels;
    ``sample(n)`` returns a synthetic ``(X, y)`` pair in the input scale.
    """

    def _validate(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64)
        y = np.asarray(y, dtype=np.int64)
        if y.min() < 0:
            raise ValueError("labels must be non-negative class indices")
        n_classes = getattr(self, "n_classes", None) or int(y.max()) + 1
        if y.max() >= n_classes:
            raise ValueError("label exceeds n_classes")
        self.n_classes_ = n_classes
        self.n_features_in_ = X.shape[1]
        self.class_probs_ = np.bincount(y, minlength=n_classes) / y.size
        return X, y

    @property
    def privacy_spec(self) -> PrivacySpec:
        return PrivacySpec(float(self.epsilon), float(self.delta))

    def fit_table(self, table: LabeledTable):
        # an explicit n_classes wins; otherwise use the table's class names
        if self.n_classes is not None:
            return self.fit(table.features, table.labels)
        self.n_classes = table.n_classes
        try:
            return self.fit(table.features, table.labels)
        finally:
            self.n_classes = None

    def sample_table(self, n: int, random_state=None, class_probs=None, like: Optional[LabeledTable] = None) -> LabeledTable:
        X, y = self.sample(n, random_state=random_state, class_probs=class_probs)
        if like is not None:
            return LabeledTable(X, y, like.feature_names, like.class_names)
        return LabeledTable(X, y)

    def epsilon_spent(self) -> float:
        check_is_fitted(self)
        return self.epsilon_spent_
