"""PrivSyn-style synthesis: noisy marginals, repair, then record updates.

The synthesis step starts from independently drawn records and greedily
rewrites single attribute values so the record set matches every target
marginal. A rewrite always lowers the error of the marginal that drives it
and is only kept if it does not raise the summed L1 error of all marginals
touching that attribute, so the total error never increases. Ties must be
accepted: when a 1-way table is already matched, fixing a (feature, label)
table needs a pair of moves in two label slices, the first of which is
neutral for the total.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np
from sklearn.utils.validation import check_is_fitted

from ..dataset import N_BINS, QuantileBinner
from ..marginals import MarginalTable, MeasurementSet, consensus_label, noisy_measurements, repair
from ..privacy import split_budget
from .base import SyntheticGenerator, as_rng

logger = logging.getLogger(__name__)

# 1-way : 2-way budget ratio
PUBLISH_RATIO = (1.0, 8.0)
STALL_TOL = 1e-4


def apportion(probs, n: int) -> np.ndarray:
    """Integer counts summing to ``n`` by largest remainder."""
    p = np.clip(np.asarray(probs, dtype=float), 0, None)
    p = p / p.sum() if p.sum() > 0 else np.full(p.shape, 1.0 / p.size)
    raw = p * n
    base = np.floor(raw).astype(np.int64)
    rem = n - int(base.sum())
    order = np.argsort(-(raw - base), kind="stable")
    base[order[:rem]] += 1
    return base


@dataclass
class GumState:
    records: np.ndarray
    targets: List[MarginalTable]
    errors: np.ndarray
    sweeps: int = 0
    converged: bool = False
    history: list = field(default_factory=list)

    @property
    def mean_l1(self) -> float:
        return float(self.errors.mean()) if self.errors.size else 0.0


class _Tracker:
    """Current counts for each target marginal, updated per rewrite."""

    def __init__(self, records, targets, domain):
        self.records = records
        self.targets = targets
        self.domain = domain
        self.n = records.shape[0]
        self.shapes = [m.probs.shape for m in targets]
        self.goal = [m.probs.ravel() * self.n for m in targets]
        self.counts = [self._count(m.clique, s) for m, s in zip(targets, self.shapes)]
        self.by_attr = {}
        for k, m in enumerate(targets):
            for a in m.clique:
                self.by_attr.setdefault(a, []).append(k)

    def _count(self, clique, shape):
        idx = np.ravel_multi_index(tuple(self.records[:, a] for a in clique), shape)
        return np.bincount(idx, minlength=int(np.prod(shape))).astype(float)

    def cell(self, k, row_values):
        return int(np.ravel_multi_index(tuple(row_values[a] for a in self.targets[k].clique), self.shapes[k]))

    def errors(self) -> np.ndarray:
        return np.array([np.abs(c - g).sum() / self.n for c, g in zip(self.counts, self.goal)])

    def move_gain(self, r: int, attr: int, new_value: int) -> float:
        """Change in summed L1 (count units) if record r's ``attr`` became ``new_value``."""
        row = self.records[r]
        old_row = row
        new_row = row.copy()
        new_row[attr] = new_value
        delta = 0.0
        for k in self.by_attr[attr]:
            c, g = self.counts[k], self.goal[k]
            i, j = self.cell(k, old_row), self.cell(k, new_row)
            delta += abs(c[i] - 1 - g[i]) - abs(c[i] - g[i]) + abs(c[j] + 1 - g[j]) - abs(c[j] - g[j])
        return delta

    def apply(self, r: int, attr: int, new_value: int) -> None:
        row = self.records[r]
        for k in self.by_attr[attr]:
            self.counts[k][self.cell(k, row)] -= 1
        row[attr] = new_value
        for k in self.by_attr[attr]:
            self.counts[k][self.cell(k, row)] += 1


def _initial_records(targets, domain, n, label_attr, rng, label_probs=None):
    records = np.empty((n, len(domain)), dtype=np.int64)
    singles = {m.clique[0]: m.probs for m in targets if len(m.clique) == 1}
    for a, size in enumerate(domain):
        if a == label_attr:
            probs = label_probs if label_probs is not None else consensus_label(targets, label_attr)
            records[:, a] = rng.permutation(np.repeat(np.arange(size), apportion(probs, n)))
            continue
        if a in singles:
            p = singles[a]
        else:
            with_a = [m for m in targets if a in m.clique]
            p = with_a[0].project([a]) if with_a else np.full(size, 1.0 / size)
        p = np.clip(p, 0, None)
        p = p / p.sum()
        records[:, a] = rng.choice(size, size=n, p=p)
    return records


def synthesize(
    targets: Sequence[MarginalTable],
    domain: Sequence[int],
    n: int,
    max_sweeps: int = 200,
    tol: float = 0.0,
    rng=None,
    label_attr: Optional[int] = None,
    label_probs=None,
    init_records=None,
) -> GumState:
    """Greedy record-update synthesis toward ``targets``.

    Each sweep visits the marginals in decreasing order of current L1 error
    and, inside each slice of the non-rewritten attributes, moves records
    from over-represented to under-represented cells of the rewritten
    attribute. A record is rewritten at most once per sweep.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = as_rng(rng)
    targets = list(targets)
    if init_records is None:
        records = _initial_records(targets, domain, n, label_attr, rng, label_probs)
    else:
        records = np.array(init_records, dtype=np.int64)
    tr = _Tracker(records, targets, domain)
    state = GumState(records, targets, tr.errors())
    state.history.append(state.mean_l1)
    if state.mean_l1 <= tol:
        state.converged = True
        return state

    # which attribute each marginal rewrites: never the label when another attribute exists
    drivers = []
    for k, m in enumerate(targets):
        free = [a for a in m.clique if a != label_attr]
        if free:
            drivers.append((k, free[0]))

    prev = state.mean_l1
    for sweep in range(max_sweeps):
        touched = np.zeros(n, dtype=bool)
        moved = 0
        errs = tr.errors()
        for k, attr in sorted(drivers, key=lambda t: -errs[t[0]]):
            m = targets[k]
            shape = tr.shapes[k]
            pos = m.clique.index(attr)
            diff = (tr.counts[k] - tr.goal[k]).reshape(shape)
            diff = np.moveaxis(diff, pos, 0).reshape(shape[pos], -1)
            others = [a for a in m.clique if a != attr]
            other_shape = [domain[a] for a in others]
            for s in range(diff.shape[1]):
                col = diff[:, s]
                if np.abs(col).sum() < 1.0:
                    continue
                if others:
                    key = np.unravel_index(s, other_shape)
                    in_slice = np.ones(n, dtype=bool)
                    for a, v in zip(others, key):
                        in_slice &= records[:, a] == v
                else:
                    in_slice = np.ones(n, dtype=bool)
                for v in np.argsort(-col, kind="stable"):
                    if col[v] < 1.0 - 1e-9:
                        break
                    cand = np.flatnonzero(in_slice & ~touched & (records[:, attr] == v))
                    cand = rng.permutation(cand)
                    for r in cand:
                        unders = np.flatnonzero(col < -1e-9)
                        if unders.size == 0 or col[v] <= 0:
                            break
                        u = int(unders[np.argmin(col[unders])])
                        if tr.move_gain(r, attr, u) <= 1e-12:
                            tr.apply(r, attr, u)
                            touched[r] = True
                            col[v] -= 1
                            col[u] += 1
                            moved += 1
                        else:
                            break
        state.errors = tr.errors()
        state.sweeps = sweep + 1
        state.history.append(state.mean_l1)
        logger.debug("sweep %d: moved %d, mean L1 %.4f", sweep + 1, moved, state.mean_l1)
        if state.mean_l1 <= tol:
            state.converged = True
            break
        # neutral moves can shuffle forever on inconsistent targets
        if moved == 0 or prev - state.mean_l1 < STALL_TOL:
            break
        prev = state.mean_l1
    if not state.converged:
        logger.debug("GUM stopped after %d sweeps at mean L1 %.4f (tol %.4f)", state.sweeps, state.mean_l1, tol)
    return state


class PrivSyn(SyntheticGenerator):
    """Noisy 1-way and (feature, label) marginals published at a 1:8 budget
    ratio, repaired, then matched by greedy record updates."""

    def __init__(self, epsilon=math.inf, delta=1e-5, max_sweeps=200, tol=0.0, n_classes=None, random_state=None):
        self.epsilon = epsilon
        self.delta = delta
        self.max_sweeps = max_sweeps
        self.tol = tol
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
        n_single, n_pair = d + 1, d
        eps_groups = split_budget(self.epsilon, PUBLISH_RATIO)
        delta_groups = split_budget(self.delta, PUBLISH_RATIO)
        eps = [eps_groups[0] / n_single] * n_single + [eps_groups[1] / n_pair] * n_pair
        deltas = [delta_groups[0] / n_single] * n_single + [delta_groups[1] / n_pair] * n_pair
        self.measurement_epsilons_ = np.asarray(eps)
        data = np.column_stack([codes, y])
        noisy = noisy_measurements(data, mset, eps, deltas, rng)
        self.marginals_ = repair(noisy, mset.label_attr)
        self.measurement_set_ = mset
        self.epsilon_spent_ = math.fsum(eps) if math.isfinite(self.epsilon) else math.inf
        return self

    def sample_discrete(self, n, random_state=None, class_probs=None):
        check_is_fitted(self, "marginals_")
        mset = self.measurement_set_
        state = synthesize(
            self.marginals_,
            mset.domain,
            n,
            self.max_sweeps,
            self.tol,
            as_rng(random_state),
            label_attr=mset.label_attr,
            label_probs=class_probs,
        )
        self.last_state_ = state
        return state.records[:, :-1], state.records[:, -1]

    def sample(self, n, random_state=None, class_probs=None):
        codes, y = self.sample_discrete(n, random_state, class_probs)
        return self.binner_.inverse_transform(codes), y
