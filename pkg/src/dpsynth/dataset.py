"""Labeled tables, CSV ingestion, splitting, and the pre/post transforms.

Continuous generators work on standardized features (``Standardizer``),
marginal-based generators on quartile-binned features (``QuantileBinner``).
Both follow the scikit-learn transformer protocol so they can be dropped
into a ``Pipeline``.
"""
from __future__ import annotations

import csv
import logging
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .exceptions import EmptyDataset, InconsistentSpec, MissingColumn, ParseError

logger = logging.getLogger(__name__)

N_BINS = 4


class ClassTooSmall(UserWarning):
    """A class has too few samples to be stratified into the test split."""


@dataclass(frozen=True)
class LabeledTable:
    features: np.ndarray
    labels: np.ndarray
    feature_names: tuple = ()
    class_names: tuple = ()

    def __post_init__(self):
        X = np.asarray(self.features)
        y = np.asarray(self.labels, dtype=np.int64)
        if X.ndim != 2:
            raise ValueError(f"features must be 2-D, got shape {X.shape}")
        if X.shape[0] != y.shape[0]:
            raise ValueError(f"{X.shape[0]} feature rows but {y.shape[0]} labels")
        if np.issubdtype(X.dtype, np.floating) and not np.all(np.isfinite(X)):
            raise ValueError("features contain NaN or Inf")
        names = tuple(self.feature_names) or tuple(f"g{j}" for j in range(X.shape[1]))
        if len(names) != X.shape[1]:
            raise ValueError("feature_names length does not match feature count")
        classes = tuple(self.class_names)
        if not classes:
            n_cls = int(y.max()) + 1 if y.size else 0
            classes = tuple(str(c) for c in range(n_cls))
        if y.size and (y.min() < 0 or y.max() >= len(classes)):
            raise ValueError("labels out of range for class_names")
        X.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "labels", y)
        object.__setattr__(self, "feature_names", names)
        object.__setattr__(self, "class_names", classes)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.n_classes)

    def class_probs(self) -> np.ndarray:
        counts = self.class_counts()
        return counts / counts.sum()

    def subset(self, rows) -> "LabeledTable":
        rows = np.asarray(rows)
        return LabeledTable(self.features[rows], self.labels[rows], self.feature_names, self.class_names)

    def with_features(self, features) -> "LabeledTable":
        return LabeledTable(features, self.labels, self.feature_names, self.class_names)


@dataclass(frozen=True)
class Split:
    train: LabeledTable
    test: LabeledTable
    split_seed: int
    train_rows: np.ndarray = field(repr=False, default=None)
    test_rows: np.ndarray = field(repr=False, default=None)


def load_csv(path, label_column: str = "label") -> LabeledTable:
    """Read a UTF-8 CSV with a header row and one label column.

    Class names are indexed in first-appearance order; row order is file order.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise EmptyDataset(f"{path} is empty") from None
        header = [h.strip() for h in header]
        if label_column not in header:
            raise MissingColumn(f"label column {label_column!r} not in header of {path}")
        label_idx = header.index(label_column)
        feat_idx = [j for j in range(len(header)) if j != label_idx]
        feature_names = tuple(header[j] for j in feat_idx)

        rows, labels, class_index = [], [], {}
        for r, rec in enumerate(reader, start=1):
            if not rec or all(not c.strip() for c in rec):
                continue
            if len(rec) != len(header):
                raise ParseError(r, "<row>", ",".join(rec))
            values = []
            for j in feat_idx:
                cell = rec[j].strip()
                try:
                    v = float(cell)
                except ValueError:
                    raise ParseError(r, header[j], cell) from None
                if not math.isfinite(v):
                    raise ParseError(r, header[j], cell)
                values.append(v)
            lab = rec[label_idx].strip()
            labels.append(class_index.setdefault(lab, len(class_index)))
            rows.append(values)
    if not rows:
        raise EmptyDataset(f"{path} has no data rows")
    return LabeledTable(
        np.asarray(rows, dtype=float),
        np.asarray(labels, dtype=np.int64),
        feature_names,
        tuple(class_index),
    )


def save_csv(table: LabeledTable, path, label_column: str = "label") -> None:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(list(table.feature_names) + [label_column])
        for x, y in zip(table.features, table.labels):
            writer.writerow([repr(float(v)) for v in x] + [table.class_names[y]])


def split(table: LabeledTable, test_fraction: float, seed: int) -> Split:
    """Stratified train/test split, deterministic given ``seed``.

    Classes with a single sample go entirely to train (a ``ClassTooSmall``
    warning is emitted); every other class keeps at least one train row.
    """
    if not 0 < test_fraction < 0.5:
        raise ValueError("test_fraction must lie in (0, 0.5)")
    rng = np.random.default_rng(seed)
    train_rows, test_rows = [], []
    for c in range(table.n_classes):
        idx = np.flatnonzero(table.labels == c)
        if idx.size == 0:
            continue
        if idx.size < 2:
            warnings.warn(
                f"class {table.class_names[c]!r} has {idx.size} sample(s); kept in train",
                ClassTooSmall,
                stacklevel=2,
            )
            train_rows.append(idx)
            continue
        idx = rng.permutation(idx)
        n_test = min(int(math.floor(test_fraction * idx.size + 0.5)), idx.size - 1)
        test_rows.append(idx[:n_test])
        train_rows.append(idx[n_test:])
    tr = np.sort(np.concatenate(train_rows)) if train_rows else np.array([], dtype=int)
    te = np.sort(np.concatenate(test_rows)) if test_rows else np.array([], dtype=int)
    return Split(table.subset(tr), table.subset(te), seed, tr, te)


def _as_matrix(X):
    if isinstance(X, LabeledTable):
        X = X.features
    return check_array(X, dtype=np.float64)


class Standardizer(TransformerMixin, BaseEstimator):
    """Per-feature z-scoring with the population standard deviation.

    Constant columns get ``std = 1`` so the transform stays invertible.
    """

    def fit(self, X, y=None):
        X = _as_matrix(X)
        if X.shape[0] == 0:
            raise EmptyDataset("cannot fit on zero rows")
        self.means_ = X.mean(axis=0)
        std = X.std(axis=0)
        std[std <= 0] = 1.0
        self.stds_ = std
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self)
        return (_as_matrix(X) - self.means_) / self.stds_

    def inverse_transform(self, X):
        check_is_fitted(self)
        return _as_matrix(X) * self.stds_ + self.means_


class QuantileBinner(TransformerMixin, BaseEstimator):
    """Quartile discretization into four bins with mean-value inverse.

    Cut points are the type-7 quantiles at 25/50/75 %. Bins are left-closed,
    the last one unbounded above. ``inverse_transform`` maps each bin to the
    mean of the training values that fell in it; a bin left empty by tied
    quantiles is represented by its (degenerate) cut value.
    """

    def fit(self, X, y=None):
        X = _as_matrix(X)
        if X.shape[0] == 0:
            raise EmptyDataset("cannot fit on zero rows")
        d = X.shape[1]
        self.cut_points_ = np.quantile(X, [0.25, 0.5, 0.75], axis=0).T.copy()
        codes = self._codes(X)
        reps = np.empty((d, N_BINS))
        for j in range(d):
            for b in range(N_BINS):
                vals = X[codes[:, j] == b, j]
                if vals.size:
                    # rounding can push a mean an ulp outside its bin
                    reps[j, b] = min(max(vals.mean(), vals.min()), vals.max())
                else:
                    reps[j, b] = self.cut_points_[j, min(b, N_BINS - 2)]
        self.representatives_ = reps
        self.n_features_in_ = d
        return self

    def _codes(self, X):
        out = np.empty(X.shape, dtype=np.int64)
        for j in range(X.shape[1]):
            out[:, j] = np.searchsorted(self.cut_points_[j], X[:, j], side="right")
        return out

    def transform(self, X):
        check_is_fitted(self)
        return self._codes(_as_matrix(X))

    def inverse_transform(self, X):
        check_is_fitted(self)
        codes = np.atleast_2d(np.asarray(X, dtype=np.int64))
        if codes.min(initial=0) < 0 or codes.max(initial=0) >= N_BINS:
            raise ValueError("bin codes out of range")
        return np.take_along_axis(self.representatives_, codes.T, axis=1).T


def discretize(binner: QuantileBinner, table: LabeledTable) -> LabeledTable:
    return table.with_features(binner.transform(table.features))


def undiscretize(binner: QuantileBinner, table: LabeledTable) -> LabeledTable:
    return table.with_features(binner.inverse_transform(table.features))


# -- planted-structure benchmark -------------------------------------------

@dataclass(frozen=True)
class DeShift:
    """Mean shift of ``gene`` in class ``cls`` (signed; magnitude > 0)."""

    gene: int
    cls: int
    shift: float


@dataclass(frozen=True)
class PlantedModule:
    genes: tuple
    rho: float
    class_shifts: dict = field(default_factory=dict)


@dataclass(frozen=True)
class PlantedSpec:
    n_per_class: tuple
    d: int
    de_genes: tuple = ()
    modules: tuple = ()
    noise_scale: float = 1.0
    base_mean: float = 10.0

    def validate(self) -> None:
        C = len(self.n_per_class)
        if C == 0 or any(int(n) < 0 for n in self.n_per_class):
            raise InconsistentSpec("n_per_class must be a non-empty list of counts")
        if self.d < 1 or self.noise_scale <= 0:
            raise InconsistentSpec("d must be >= 1 and noise_scale > 0")
        for s in self.de_genes:
            if not 0 <= s.gene < self.d or not 0 <= s.cls < C:
                raise InconsistentSpec(f"DE shift {s} out of range")
            if s.shift == 0:
                raise InconsistentSpec(f"DE shift {s} has zero magnitude")
        seen = set()
        for m in self.modules:
            if not 0 < m.rho < 1:
                raise InconsistentSpec(f"module rho {m.rho} not in (0, 1)")
            for g in m.genes:
                if not 0 <= g < self.d:
                    raise InconsistentSpec(f"module gene {g} out of range")
                if g in seen:
                    raise InconsistentSpec(f"gene {g} appears in two modules")
                seen.add(g)
            for c, v in m.class_shifts.items():
                if not 0 <= int(c) < C or v == 0:
                    raise InconsistentSpec(f"module class shift {c}: {v} invalid")

    def mean_matrix(self) -> np.ndarray:
        """Class-by-gene expected expression."""
        mu = np.full((len(self.n_per_class), self.d), float(self.base_mean))
        for s in self.de_genes:
            mu[s.cls, s.gene] += s.shift
        for m in self.modules:
            for c, v in m.class_shifts.items():
                mu[int(c), list(m.genes)] += v
        return mu

    @classmethod
    def from_dict(cls, cfg: dict) -> "PlantedSpec":
        de = tuple(DeShift(int(g["gene"]), int(g["cls"]), float(g["shift"])) for g in cfg.get("de_genes", ()))
        mods = tuple(
            PlantedModule(
                tuple(int(i) for i in m["genes"]),
                float(m["rho"]),
                {int(k): float(v) for k, v in m.get("class_shifts", {}).items()},
            )
            for m in cfg.get("modules", ())
        )
        return cls(
            tuple(int(n) for n in cfg["n_per_class"]),
            int(cfg["d"]),
            de,
            mods,
            float(cfg.get("noise_scale", 1.0)),
            float(cfg.get("base_mean", 10.0)),
        )

    def to_dict(self) -> dict:
        return {
            "n_per_class": list(self.n_per_class),
            "d": self.d,
            "de_genes": [{"gene": s.gene, "cls": s.cls, "shift": s.shift} for s in self.de_genes],
            "modules": [
                {"genes": list(m.genes), "rho": m.rho, "class_shifts": {str(k): v for k, v in m.class_shifts.items()}}
                for m in self.modules
            ],
            "noise_scale": self.noise_scale,
            "base_mean": self.base_mean,
        }


@dataclass(frozen=True)
class OracleAnnotations:
    """Ground truth for a planted table.

    ``de_up[(a, b)]`` holds genes whose expected expression is higher in
    class ``a`` than in class ``b``; ``de_down`` the reverse.
    """

    de_up: dict
    de_down: dict
    modules: tuple


def generate_planted(spec: PlantedSpec, seed: int):
    """Draw a labeled table with planted DE genes and co-expression modules.

    Module genes share a per-sample latent factor so that within a class
    their pairwise correlation is ``rho``.
    """
    spec.validate()
    rng = np.random.default_rng(seed)
    counts = np.asarray(spec.n_per_class, dtype=int)
    n = int(counts.sum())
    if n == 0:
        raise InconsistentSpec("planted spec has zero samples")
    labels = np.repeat(np.arange(len(counts)), counts)
    noise = rng.standard_normal((n, spec.d))
    for m in spec.modules:
        genes = list(m.genes)
        factor = rng.standard_normal((n, 1))
        noise[:, genes] = math.sqrt(m.rho) * factor + math.sqrt(1 - m.rho) * noise[:, genes]
    mu = spec.mean_matrix()
    X = mu[labels] + spec.noise_scale * noise
    order = rng.permutation(n)
    X, labels = X[order], labels[order]

    C = len(counts)
    up, down = {}, {}
    for a in range(C):
        for b in range(C):
            if a == b:
                continue
            diff = mu[a] - mu[b]
            up[(a, b)] = frozenset(np.flatnonzero(diff > 0).tolist())
            down[(a, b)] = frozenset(np.flatnonzero(diff < 0).tolist())
    ann = OracleAnnotations(up, down, tuple(frozenset(m.genes) for m in spec.modules))
    table = LabeledTable(
        X,
        labels,
        tuple(f"g{j}" for j in range(spec.d)),
        tuple(f"c{c}" for c in range(C)),
    )
    return table, ann


def scaled_class_counts(total: int, ratios: Sequence[float]) -> list:
    """Largest-remainder apportionment of ``total`` rows to ``ratios``."""
    r = np.asarray(ratios, dtype=float)
    raw = total * r / r.sum()
    base = np.floor(raw).astype(int)
    rem = total - base.sum()
    order = np.argsort(-(raw - base), kind="stable")
    base[order[:rem]] += 1
    return base.tolist()
