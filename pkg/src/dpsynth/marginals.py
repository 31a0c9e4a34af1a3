"""Discrete marginal measurement, Gaussian noising and consistency repair.

Discrete records are integer matrices whose last column is the label. The
default measurement set is the star around the label: every singleton plus
every (feature, label) pair.
"""
from __future__ import annotations

import json
import logging
import warnings
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .exceptions import UnbinnedInput
from .privacy import calibrate_gaussian

logger = logging.getLogger(__name__)


class DegenerateTable(UserWarning):
    """A marginal had no positive mass after clipping and was reset to uniform."""


@dataclass(frozen=True)
class MeasurementSet:
    cliques: tuple
    domain: tuple

    @classmethod
    def star(cls, n_features: int, n_classes: int, n_bins: int = 4) -> "MeasurementSet":
        label = n_features
        singles = [(i,) for i in range(n_features + 1)]
        pairs = [(i, label) for i in range(n_features)]
        return cls(tuple(singles + pairs), tuple([n_bins] * n_features + [n_classes]))

    @property
    def label_attr(self) -> int:
        return len(self.domain) - 1

    def __post_init__(self):
        for c in self.cliques:
            if not c or any(not 0 <= a < len(self.domain) for a in c) or len(set(c)) != len(c):
                raise ValueError(f"invalid clique {c}")


@dataclass(frozen=True)
class MarginalTable:
    clique: tuple
    probs: np.ndarray
    noise_sigma: float = 0.0
    n_ref: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "clique", tuple(int(a) for a in self.clique))
        object.__setattr__(self, "probs", np.asarray(self.probs, dtype=float))
        if self.probs.ndim != len(self.clique):
            raise ValueError("probs must have one axis per clique attribute")

    @property
    def shape(self):
        return self.probs.shape

    def project(self, attrs) -> np.ndarray:
        """Marginalize onto ``attrs`` (a subset of the clique, in clique order)."""
        keep = [self.clique.index(a) for a in attrs]
        drop = tuple(k for k in range(len(self.clique)) if k not in keep)
        return self.probs.sum(axis=drop)

    def to_dict(self) -> dict:
        return {
            "clique": list(self.clique),
            "domain": list(self.probs.shape),
            "probs": self.probs.ravel().tolist(),
            "sigma": self.noise_sigma,
            "n_ref": self.n_ref,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MarginalTable":
        probs = np.asarray(d["probs"], dtype=float).reshape(d["domain"])
        return cls(tuple(d["clique"]), probs, float(d.get("sigma", 0.0)), float(d.get("n_ref", 1.0)))


def check_discrete(data, domain: Sequence[int]) -> np.ndarray:
    arr = np.asarray(data)
    if arr.ndim != 2 or arr.shape[1] != len(domain):
        raise UnbinnedInput(f"expected an integer matrix with {len(domain)} columns, got {arr.shape}")
    if not np.issubdtype(arr.dtype, np.integer):
        if not np.all(np.mod(arr, 1) == 0):
            raise UnbinnedInput("input is not discretized (non-integer cells)")
        arr = arr.astype(np.int64)
    if arr.size and (arr.min() < 0 or np.any(arr.max(axis=0) >= np.asarray(domain))):
        raise UnbinnedInput("cells outside the attribute domain")
    return arr


def measure(data, clique, domain: Sequence[int]) -> MarginalTable:
    """Exact normalized counts of ``clique`` (identity query)."""
    arr = check_discrete(data, domain)
    clique = tuple(clique)
    shape = tuple(domain[a] for a in clique)
    flat = np.ravel_multi_index(tuple(arr[:, a] for a in clique), shape)
    counts = np.bincount(flat, minlength=int(np.prod(shape))).reshape(shape)
    n = arr.shape[0]
    return MarginalTable(clique, counts / max(n, 1), 0.0, float(n))


def add_noise(marginal: MarginalTable, epsilon: float, delta: float, n: float, rng: np.random.Generator) -> MarginalTable:
    """Gaussian mechanism on the count histogram (add/remove sensitivity 1)."""
    sigma_count = calibrate_gaussian(1.0, epsilon, delta)
    if sigma_count == 0:
        return replace(marginal, noise_sigma=0.0, n_ref=float(n))
    counts = marginal.probs * n + rng.normal(0.0, sigma_count, size=marginal.probs.shape)
    return MarginalTable(marginal.clique, counts / n, sigma_count / n, float(n))


def _clip_normalize(p: np.ndarray, clique) -> np.ndarray:
    p = np.clip(p, 0.0, None)
    s = p.sum()
    if not s > 0:
        warnings.warn(f"marginal {clique} has no positive mass; using uniform", DegenerateTable, stacklevel=3)
        return np.full(p.shape, 1.0 / p.size)
    return p / s


def _consensus(tables: Sequence[MarginalTable], attr: int) -> np.ndarray:
    """Inverse-variance weighted margin of ``attr`` over every table holding it.

    Noiseless tables, if any, are averaged exclusively.
    """
    implied, variances = [], []
    for m in tables:
        if attr not in m.clique:
            continue
        implied.append(m.project([attr]))
        cells_summed = m.probs.size // m.shape[m.clique.index(attr)]
        variances.append(m.noise_sigma**2 * cells_summed)
    implied = np.asarray(implied)
    variances = np.asarray(variances)
    w = (variances == 0).astype(float) if np.any(variances == 0) else 1.0 / variances
    c = (w[:, None] * implied).sum(axis=0) / w.sum()
    return c / c.sum()


def _match_margin(p: np.ndarray, ax: int, target: np.ndarray) -> np.ndarray:
    """Rescale slices along ``ax`` so the margin equals ``target``."""
    q = np.moveaxis(p, ax, -1).copy()
    flat = q.reshape(-1, q.shape[-1])
    mass = flat.sum(axis=0)
    for v in range(flat.shape[1]):
        if mass[v] > 0:
            flat[:, v] *= target[v] / mass[v]
        else:
            flat[:, v] = target[v] / flat.shape[0]
    return np.moveaxis(flat.reshape(q.shape), -1, ax)


def _fit_margins(m: MarginalTable, order, consensus, max_iter: int, tol: float) -> MarginalTable:
    """Iterative proportional scaling of one table to the margins in ``order``."""
    p = m.probs
    axes = [m.clique.index(a) for a in order]
    for _ in range(max_iter if len(order) > 1 else 1):
        for a, ax in zip(order, axes):
            p = _match_margin(p, ax, consensus[a])
        gap = max(
            np.abs(p.sum(axis=tuple(i for i in range(p.ndim) if i != ax)) - consensus[a]).max()
            for a, ax in zip(order, axes)
        )
        if gap <= tol:
            break
    return replace(m, probs=p)


def repair(
    marginals: Sequence[MarginalTable],
    label_attr: Optional[int] = None,
    max_iter: int = 200,
    tol: float = 1e-12,
) -> List[MarginalTable]:
    """Make noisy marginals non-negative, normalized and mutually consistent.

    For every attribute held by more than one table, the margins implied by
    those tables are combined by inverse-variance weighting. Each multi-way
    table is then fit to the consensus margins of its attributes by
    iterative proportional scaling, label last, so label margins agree
    exactly.

    Clipping can leave zero patterns under which a consensus margin is
    unreachable. The final margin of each shared attribute is therefore
    re-read from the fitted multi-way tables, and one-way tables are set to
    it. The result is a fixed point of ``repair``.
    """
    tables = [replace(m, probs=_clip_normalize(m.probs, m.clique)) for m in marginals]
    holders: dict = {}
    for m in tables:
        for a in m.clique:
            holders[a] = holders.get(a, 0) + 1
    shared = sorted(a for a, k in holders.items() if k > 1 or a == label_attr)
    consensus = {a: _consensus(tables, a) for a in shared}

    out = list(tables)
    multi = []
    for k, m in enumerate(tables):
        if len(m.clique) < 2:
            continue
        order = [a for a in m.clique if a in consensus and a != label_attr]
        if label_attr in m.clique:
            order.append(label_attr)
        if order:
            out[k] = _fit_margins(m, order, consensus, max_iter, tol)
        multi.append(out[k])

    for a in shared:
        if a != label_attr and any(a in m.clique for m in multi):
            consensus[a] = _consensus(multi, a)
    for k, m in enumerate(out):
        if len(m.clique) == 1 and m.clique[0] in consensus:
            out[k] = replace(m, probs=consensus[m.clique[0]].copy())
    return out


def consensus_label(marginals: Sequence[MarginalTable], label_attr: int) -> np.ndarray:
    for m in marginals:
        if m.clique == (label_attr,):
            return m.probs.copy()
    for m in marginals:
        if label_attr in m.clique:
            return m.project([label_attr])
    raise ValueError("no marginal contains the label attribute")


def measure_all(data, mset: MeasurementSet) -> List[MarginalTable]:
    return [measure(data, c, mset.domain) for c in mset.cliques]


def noisy_measurements(
    data,
    mset: MeasurementSet,
    epsilons: Sequence[float],
    deltas: Sequence[float],
    rng: np.random.Generator,
) -> List[MarginalTable]:
    arr = check_discrete(data, mset.domain)
    n = arr.shape[0]
    return [add_noise(measure(arr, c, mset.domain), e, dl, n, rng) for c, e, dl in zip(mset.cliques, epsilons, deltas)]


def l1_error(counts_probs: np.ndarray, target: np.ndarray) -> float:
    return float(np.abs(np.asarray(counts_probs) - np.asarray(target)).sum())


def marginals_to_json(marginals: Sequence[MarginalTable]) -> str:
    return json.dumps([m.to_dict() for m in marginals])


def marginals_from_json(text: str) -> List[MarginalTable]:
    return [MarginalTable.from_dict(d) for d in json.loads(text)]
