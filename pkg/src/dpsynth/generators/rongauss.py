"""Class-conditional Gaussian synthesis in a random orthonormal projection."""
from __future__ import annotations

import json
import logging
import math
import warnings

import numpy as np
from sklearn.utils.validation import check_is_fitted

from ..dataset import Standardizer
from ..exceptions import EmptyClass
from ..privacy import calibrate_gaussian
from .base import SyntheticGenerator, as_rng, sample_labels

logger = logging.getLogger(__name__)

MODEL_VERSION = 1


class ZeroVectorWarning(UserWarning):
    pass


def random_orthonormal(d: int, p: int, rng: np.random.Generator) -> np.ndarray:
    """d x p matrix with orthonormal columns from QR of a Gaussian matrix."""
    q, r = np.linalg.qr(rng.standard_normal((d, p)))
    # sign fix makes the draw Haar-distributed
    return q * np.sign(np.diag(r))


def _unit_rows(X):
    norms = np.linalg.norm(X, axis=1, keepdims=True)
    zero = norms[:, 0] == 0
    if zero.any():
        warnings.warn(f"{int(zero.sum())} all-zero row(s) left at zero", ZeroVectorWarning, stacklevel=3)
    return X / np.where(norms > 0, norms, 1.0)


def psd_repair(S: np.ndarray) -> np.ndarray:
    """Symmetrize and clip negative eigenvalues to zero."""
    S = 0.5 * (S + S.T)
    w, V = np.linalg.eigh(S)
    return (V * np.clip(w, 0.0, None)) @ V.T


class RonGauss(SyntheticGenerator):
    """RON-Gauss: per-class DP mean and DP covariance of unit-normalized rows.

    Parameters
    ----------
    epsilon, delta : float
        Budget per class. Classes are disjoint so they compose in parallel;
        within a class the budget is halved between mean and covariance.
    n_components : int, optional
        Projection dimension ``p``; defaults to ``min(d, 100)``.
    standardize : bool
        Z-score features with the training-set transform before fitting and
        undo it after sampling, the same public preprocessing the neural
        generators use. Without it, per-gene baselines dominate the unit-norm
        row directions and class shifts are largely washed out.
    """

    def __init__(self, epsilon=math.inf, delta=1e-5, n_components=None, standardize=True, n_classes=None, random_state=None):
        self.epsilon = epsilon
        self.delta = delta
        self.n_components = n_components
        self.standardize = standardize
        self.n_classes = n_classes
        self.random_state = random_state

    def fit(self, X, y):
        X, y = self._validate(X, y)
        rng = as_rng(self.random_state)
        d = X.shape[1]
        p = self.n_components or min(d, 100)
        if not 1 <= p <= d:
            raise ValueError(f"n_components must lie in [1, {d}]")
        if self.standardize:
            self.scaler_ = Standardizer().fit(X)
            X = self.scaler_.transform(X)
        else:
            self.scaler_ = None

        W = random_orthonormal(d, p, rng)
        eps_half, delta_half = self.epsilon / 2.0, self.delta / 2.0
        means, covs, mean_sigmas, cov_sigmas = [], [], [], []
        for c in range(self.n_classes_):
            Xc = X[y == c]
            n_c = Xc.shape[0]
            if n_c == 0:
                raise EmptyClass(f"class {c} has no training rows")
            Xc = _unit_rows(Xc)
            s_mean = calibrate_gaussian(2.0 / n_c, eps_half, delta_half)
            mu = Xc.mean(axis=0)
            if s_mean > 0:
                mu = mu + rng.normal(0.0, s_mean, size=d)
            Xc = _unit_rows(Xc - mu)
            Xp = Xc @ W
            s_cov = calibrate_gaussian(2.0 / n_c, eps_half, delta_half)
            S = Xp.T @ Xp / n_c
            if s_cov > 0:
                S = S + rng.normal(0.0, s_cov, size=S.shape)
            means.append(mu)
            covs.append(psd_repair(S))
            mean_sigmas.append(s_mean)
            cov_sigmas.append(s_cov)

        self.projection_ = W
        self.means_ = np.asarray(means)
        self.covariances_ = np.asarray(covs)
        self.mean_noise_sigma_ = np.asarray(mean_sigmas)
        self.cov_noise_sigma_ = np.asarray(cov_sigmas)
        # classes are disjoint: parallel composition, mean+cov sequential within a class
        self.epsilon_spent_ = math.fsum([eps_half, eps_half]) if math.isfinite(self.epsilon) else math.inf
        return self

    def _draw_class(self, c: int, n: int, rng) -> np.ndarray:
        W = self.projection_
        mu = self.means_[c]
        w, V = np.linalg.eigh(self.covariances_[c])
        root = V * np.sqrt(np.clip(w, 0.0, None))
        z = W.T @ mu + rng.standard_normal((n, W.shape[1])) @ root.T
        return z @ W.T + mu

    def sample(self, n, random_state=None, class_probs=None):
        check_is_fitted(self, "projection_")
        rng = as_rng(random_state)
        probs = self.class_probs_ if class_probs is None else class_probs
        y = sample_labels(probs, n, rng)
        X = np.empty((n, self.projection_.shape[0]))
        for c in range(self.n_classes_):
            rows = np.flatnonzero(y == c)
            if rows.size:
                X[rows] = self._draw_class(c, rows.size, rng)
        if self.scaler_ is not None:
            X = self.scaler_.inverse_transform(X)
        return X, y

    def sample_class(self, c: int, n: int, random_state=None, projected: bool = False) -> np.ndarray:
        """Rows for class ``c`` only; ``projected`` returns ``W^T (x - mu_c)``."""
        check_is_fitted(self, "projection_")
        X = self._draw_class(c, n, as_rng(random_state))
        if projected:
            return (X - self.means_[c]) @ self.projection_
        if self.scaler_ is not None:
            X = self.scaler_.inverse_transform(X)
        return X

    def to_dict(self) -> dict:
        check_is_fitted(self, "projection_")
        return {
            "version": MODEL_VERSION,
            "kind": "rongauss",
            "projection": self.projection_.tolist(),
            "means": self.means_.tolist(),
            "covariances": self.covariances_.tolist(),
            "class_probs": self.class_probs_.tolist(),
            "scaler": None if self.scaler_ is None else {"means": self.scaler_.means_.tolist(), "stds": self.scaler_.stds_.tolist()},
        }

    @classmethod
    def from_dict(cls, data: dict) -> "RonGauss":
        if data.get("version") != MODEL_VERSION or data.get("kind") != "rongauss":
            raise ValueError("not a RON-Gauss model artifact")
        m = cls(standardize=data["scaler"] is not None)
        m.projection_ = np.asarray(data["projection"])
        m.means_ = np.asarray(data["means"])
        m.covariances_ = np.asarray(data["covariances"])
        m.class_probs_ = np.asarray(data["class_probs"])
        m.n_classes_ = m.class_probs_.size
        m.n_features_in_ = m.projection_.shape[0]
        if data["scaler"] is not None:
            sc = Standardizer()
            sc.means_ = np.asarray(data["scaler"]["means"])
            sc.stds_ = np.asarray(data["scaler"]["stds"])
            sc.n_features_in_ = sc.means_.size
            m.scaler_ = sc
        else:
            m.scaler_ = None
        return m

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)
