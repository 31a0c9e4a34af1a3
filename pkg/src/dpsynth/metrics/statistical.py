"""Marginal fidelity (histogram intersection) and joint fidelity (k-NN distance)."""
from __future__ import annotations

from typing import Dict, Sequence

import numpy as np
from scipy.spatial.distance import cdist

from ..exceptions import BinMismatch, EmptyReference

DEFAULT_BIN_COUNTS = (25, 50, 100)


def histogram_intersection(p, q) -> float:
    """Sum of elementwise minima of two normalized histograms (= 1 - TV)."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape:
        raise BinMismatch(f"histograms have {p.shape} and {q.shape} bins")
    return float(np.minimum(p, q).sum())


def total_variation(p, q) -> float:
    return 0.5 * float(np.abs(np.asarray(p, float) - np.asarray(q, float)).sum())


def column_counts(real: np.ndarray, synth: np.ndarray, bins: int):
    """Per-feature bin counts on shared min-max-scaled supports."""
    lo = np.minimum(real.min(axis=0), synth.min(axis=0))
    hi = np.maximum(real.max(axis=0), synth.max(axis=0))
    span = np.where(hi > lo, hi - lo, 1.0)

    def counts(X):
        Z = np.clip((X - lo) / span, 0.0, 1.0)
        idx = np.minimum((Z * bins).astype(np.int64), bins - 1)
        H = np.zeros((X.shape[1], bins), dtype=np.int64)
        for j in range(X.shape[1]):
            H[j] = np.bincount(idx[:, j], minlength=bins)
        return H

    return counts(real), counts(synth)


def column_histograms(real: np.ndarray, synth: np.ndarray, bins: int):
    """Per-feature normalized histograms on shared min-max-scaled supports."""
    A, B = column_counts(real, synth, bins)
    return A / real.shape[0], B / synth.shape[0]


def overlap_score(real, synth, bin_counts: Sequence[int] = DEFAULT_BIN_COUNTS) -> Dict:
    """Mean histogram intersection over features, per bin count and averaged.

    Returns ``{bins: score, ..., "mean": mean over bin counts}``.
    """
    real = np.asarray(getattr(real, "features", real), dtype=float)
    synth = np.asarray(getattr(synth, "features", synth), dtype=float)
    if real.shape[1] != synth.shape[1]:
        raise BinMismatch("real and synthetic tables have different feature counts")
    nr, ns = real.shape[0], synth.shape[0]
    out = {}
    for b in bin_counts:
        A, B = column_counts(real, synth, int(b))
        # integer cross-multiplication keeps identical histograms at exactly 1
        hi = np.minimum(A * ns, B * nr).sum(axis=1) / (nr * ns)
        out[int(b)] = float(np.mean(hi))
    out["mean"] = float(np.mean([out[int(b)] for b in bin_counts]))
    return out


def knn_distances(synth, reference, k: int = 10, chunk: int = 512) -> np.ndarray:
    """Sorted distances to the k nearest reference rows, shape (n_synth, k).

    Only distance values are returned, so which of several tied neighbours
    is chosen does not affect the result.
    """
    S = np.asarray(getattr(synth, "features", synth), dtype=float)
    R = np.asarray(getattr(reference, "features", reference), dtype=float)
    if R.shape[0] == 0:
        raise EmptyReference("reference set is empty")
    if not 1 <= k <= R.shape[0]:
        raise ValueError(f"k={k} must lie in [1, {R.shape[0]}]")
    out = np.empty((S.shape[0], k))
    for start in range(0, S.shape[0], chunk):
        D = cdist(S[start:start + chunk], R)
        if k < R.shape[0]:
            D = np.partition(D, k - 1, axis=1)[:, :k]
        out[start:start + chunk] = np.sort(D, axis=1)[:, :k]
    return out


def knn_distance_score(synth, reference, k: int = 10) -> float:
    """Mean distance from each synthetic row to its k nearest reference rows."""
    return float(knn_distances(synth, reference, k).mean())
