"""Black-box membership inference from released synthetic data."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats
from scipy.spatial.distance import cdist

from .dataset import Standardizer
from .exceptions import EmptySet


@dataclass(frozen=True)
class MiaResult:
    auc: float
    scores: np.ndarray
    member_flags: np.ndarray

    def to_dict(self) -> dict:
        return {"auc": self.auc, "n_members": int(self.member_flags.sum()), "n_nonmembers": int((~self.member_flags).sum())}


def auc_mann_whitney(pos_scores, neg_scores) -> float:
    """P(score_pos > score_neg) with ties counted as one half."""
    pos = np.asarray(pos_scores, dtype=float)
    neg = np.asarray(neg_scores, dtype=float)
    if pos.size == 0 or neg.size == 0:
        raise EmptySet("need at least one member and one non-member")
    ranks = stats.rankdata(np.concatenate([pos, neg]))
    u = ranks[: pos.size].sum() - pos.size * (pos.size + 1) / 2.0
    return float(u / (pos.size * neg.size))


def nearest_distance(queries: np.ndarray, reference: np.ndarray, chunk: int = 1024) -> np.ndarray:
    out = np.empty(queries.shape[0])
    for s in range(0, queries.shape[0], chunk):
        out[s:s + chunk] = cdist(queries[s:s + chunk], reference).min(axis=1)
    return out


def blackbox_attack(synth, members, nonmembers) -> MiaResult:
    """Score each record by minus its distance to the closest synthetic row.

    Features are standardized with a transform fit on the synthetic data,
    i.e. on what the attacker can see.
    """
    S = np.asarray(getattr(synth, "features", synth), dtype=float)
    M = np.asarray(getattr(members, "features", members), dtype=float)
    N = np.asarray(getattr(nonmembers, "features", nonmembers), dtype=float)
    if S.shape[0] == 0 or M.shape[0] == 0 or N.shape[0] == 0:
        raise EmptySet("synthetic, member and non-member sets must be non-empty")
    sc = Standardizer().fit(S)
    Ss, Q = sc.transform(S), sc.transform(np.vstack([M, N]))
    scores = -nearest_distance(Q, Ss)
    flags = np.r_[np.ones(M.shape[0], bool), np.zeros(N.shape[0], bool)]
    return MiaResult(auc_mann_whitney(scores[flags], scores[~flags]), scores, flags)
