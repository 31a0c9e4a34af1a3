"""Biological plausibility: DE genes, co-expression networks, modules, GFCs."""
from __future__ import annotations

import itertools
import logging
import warnings
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Dict, List, Optional, Sequence, Tuple

import networkx as nx
import numpy as np
from scipy import stats
from scipy.cluster.hierarchy import leaves_list, linkage
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist

from ..dataset import LabeledTable
from ..exceptions import EmptyNetwork, NodeSetMismatch, NoValidPairs, ZeroVariance

logger = logging.getLogger(__name__)

EXACT_MAX_N = 12


class SkippedPair(UserWarning):
    pass


class ZeroVarianceWarning(UserWarning):
    pass


# -- rank-sum test -----------------------------------------------------------

@lru_cache(maxsize=256)
def _u_distribution(n_a: int, n_b: int) -> np.ndarray:
    """Counts of each U value over all C(n_a+n_b, n_a) rank assignments."""
    # f[i][j][u]: ways for i a-items and j b-items to reach U = u
    N = n_a * n_b
    f = [[None] * (n_b + 1) for _ in range(n_a + 1)]
    for i in range(n_a + 1):
        for j in range(n_b + 1):
            if i == 0 or j == 0:
                arr = np.zeros(N + 1)
                arr[0] = 1.0
                f[i][j] = arr
                continue
            # largest element is either from a (contributing j) or from b
            arr = np.zeros(N + 1)
            arr[j:] += f[i - 1][j][: N + 1 - j]
            arr += f[i][j - 1]
            f[i][j] = arr
    return f[n_a][n_b]


def _exact_p(u: float, n_a: int, n_b: int, alternative: str) -> float:
    dist = _u_distribution(n_a, n_b)
    total = dist.sum()
    u = int(round(u))
    if alternative == "greater":
        return float(dist[u:].sum() / total)
    return float(dist[: u + 1].sum() / total)


def _rank_test_columns(A: np.ndarray, B: np.ndarray):
    """One-sided Mann-Whitney p-values for every column of A vs B.

    Returns ``(p_greater, p_less)``; "greater" means A tends to exceed B.
    """
    n_a, n_b = A.shape[0], B.shape[0]
    Z = np.vstack([A, B])
    ranks = stats.rankdata(Z, axis=0)
    u = ranks[:n_a].sum(axis=0) - n_a * (n_a + 1) / 2.0
    N = n_a + n_b
    mean = n_a * n_b / 2.0
    # tie correction: sum(t^3 - t) per column
    tie_term = np.zeros(Z.shape[1])
    has_ties = np.zeros(Z.shape[1], dtype=bool)
    for j in range(Z.shape[1]):
        _, cnt = np.unique(Z[:, j], return_counts=True)
        tie_term[j] = np.sum(cnt**3 - cnt)
        has_ties[j] = np.any(cnt > 1)
    var = n_a * n_b / 12.0 * ((N + 1) - tie_term / (N * (N - 1)))
    p_g = np.ones(Z.shape[1])
    p_l = np.ones(Z.shape[1])
    ok = var > 0
    sd = np.sqrt(np.where(ok, var, 1.0))
    p_g = np.where(ok, stats.norm.sf((u - mean - 0.5) / sd), 1.0)
    p_l = np.where(ok, stats.norm.cdf((u - mean + 0.5) / sd), 1.0)
    if N <= EXACT_MAX_N:
        for j in np.flatnonzero(~has_ties):
            p_g[j] = _exact_p(u[j], n_a, n_b, "greater")
            p_l[j] = _exact_p(u[j], n_a, n_b, "less")
    return np.clip(p_g, 0.0, 1.0), np.clip(p_l, 0.0, 1.0)


def rank_test(sample_a, sample_b, alternative: str = "greater") -> float:
    """Two-sample Wilcoxon rank-sum (Mann-Whitney U) one-sided p-value.

    Exact when ``len(a) + len(b) <= 12`` without ties, otherwise the normal
    approximation with tie and continuity correction. All-identical inputs
    give ``p = 1``.
    """
    if alternative not in ("greater", "less"):
        raise ValueError("alternative must be 'greater' or 'less'")
    a = np.asarray(sample_a, dtype=float).reshape(-1, 1)
    b = np.asarray(sample_b, dtype=float).reshape(-1, 1)
    if a.size == 0 or b.size == 0:
        raise ValueError("both samples must be non-empty")
    p_g, p_l = _rank_test_columns(a, b)
    return float(p_g[0] if alternative == "greater" else p_l[0])


# -- differential expression ------------------------------------------------

@dataclass(frozen=True)
class DeResult:
    """Per class pair ``(a, b)`` with ``a < b``: genes up / down in ``a`` vs ``b``."""

    up: Dict[Tuple[int, int], frozenset]
    down: Dict[Tuple[int, int], frozenset]
    n_genes: int
    p_greater: Dict[Tuple[int, int], np.ndarray] = field(default_factory=dict, repr=False)
    p_less: Dict[Tuple[int, int], np.ndarray] = field(default_factory=dict, repr=False)
    skipped: Tuple[Tuple[int, int], ...] = ()

    @property
    def pairs(self):
        return sorted(self.up)

    def to_dict(self) -> dict:
        return {
            "n_genes": self.n_genes,
            "pairs": [
                {"a": a, "b": b, "up": sorted(self.up[(a, b)]), "down": sorted(self.down[(a, b)])}
                for a, b in self.pairs
            ],
            "skipped": [list(p) for p in self.skipped],
        }


def de_genes(table: LabeledTable, alpha: float = 0.05, n_classes: Optional[int] = None) -> DeResult:
    X, y = table.features, table.labels
    C = n_classes or table.n_classes
    up, down, pg, pl, skipped = {}, {}, {}, {}, []
    for a, b in itertools.combinations(range(C), 2):
        A, B = X[y == a], X[y == b]
        if A.shape[0] < 2 or B.shape[0] < 2:
            warnings.warn(f"skipping class pair ({a}, {b}): fewer than 2 samples", SkippedPair, stacklevel=2)
            skipped.append((a, b))
            continue
        p_g, p_l = _rank_test_columns(A, B)
        up[(a, b)] = frozenset(np.flatnonzero(p_g <= alpha).tolist())
        down[(a, b)] = frozenset(np.flatnonzero(p_l <= alpha).tolist())
        pg[(a, b)], pl[(a, b)] = p_g, p_l
    return DeResult(up, down, X.shape[1], pg, pl, tuple(skipped))


def de_tpr_fpr(real: DeResult, synth: DeResult, return_skipped: bool = False):
    """Mean true/false positive rates of synthetic DE sets against real ones.

    Rates are averaged over pairs and both directions; a (pair, direction)
    with no real DE genes has no defined TPR and is left out of the mean.
    """
    if real.n_genes != synth.n_genes:
        raise ValueError("DE results cover different gene sets")
    d = real.n_genes
    tprs, fprs, skipped = [], [], 0
    for pair in real.pairs:
        for real_sets, synth_sets in ((real.up, synth.up), (real.down, synth.down)):
            R = real_sets[pair]
            S = synth_sets.get(pair, frozenset())
            if R:
                tprs.append(len(S & R) / len(R))
            else:
                skipped += 1
            if d - len(R) > 0:
                fprs.append(len(S - R) / (d - len(R)))
    if not tprs:
        raise NoValidPairs("no class pair has real DE genes")
    out = (float(np.mean(tprs)), float(np.mean(fprs)) if fprs else 0.0)
    return (*out, skipped) if return_skipped else out


# -- co-expression --------------------------------------------------------------

def pearson(x, y) -> Tuple[float, float]:
    """Pearson r and two-sided p from the t distribution with n - 2 df."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n = x.size
    if n < 3 or y.size != n:
        raise ValueError("need two equal-length samples with n >= 3")
    xc, yc = x - x.mean(), y - y.mean()
    sxx, syy = np.sqrt(np.sum(xc * xc)), np.sqrt(np.sum(yc * yc))
    if sxx == 0 or syy == 0:
        raise ZeroVariance("zero variance: correlation undefined")
    r = float(np.clip(np.sum(xc * yc) / (sxx * syy), -1.0, 1.0))
    return r, float(_r_pvalue(np.array([r]), n)[0])


def _r_pvalue(r: np.ndarray, n: int) -> np.ndarray:
    r = np.clip(r, -1.0, 1.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = r * np.sqrt((n - 2) / (1.0 - r * r))
    p = 2.0 * stats.t.sf(np.abs(t), n - 2)
    return np.where(np.abs(r) >= 1.0, 0.0, p)


def correlation_matrix(X: np.ndarray) -> np.ndarray:
    """Pearson correlations; zero-variance genes give NaN rows/columns."""
    Xc = X - X.mean(axis=0)
    norms = np.sqrt(np.sum(Xc * Xc, axis=0))
    zero = norms == 0
    if zero.any():
        warnings.warn(f"{int(zero.sum())} zero-variance gene(s) excluded", ZeroVarianceWarning, stacklevel=3)
    with np.errstate(divide="ignore", invalid="ignore"):
        R = (Xc.T @ Xc) / np.outer(norms, norms)
    R = np.clip(R, -1.0, 1.0)
    R[zero, :] = np.nan
    R[:, zero] = np.nan
    return R


@dataclass(frozen=True)
class CoexNetwork:
    edges: Dict[Tuple[int, int], Tuple[float, float]]
    n_genes: int
    r_min: float
    alpha: float = 0.05

    @property
    def edge_set(self) -> frozenset:
        return frozenset(self.edges)

    @property
    def nodes(self) -> frozenset:
        return frozenset(itertools.chain.from_iterable(self.edges))

    def to_graph(self) -> nx.Graph:
        G = nx.Graph()
        G.add_nodes_from(sorted(self.nodes))
        for (j, k), (r, _) in sorted(self.edges.items()):
            G.add_edge(j, k, weight=r)
        return G

    def to_rows(self) -> List[dict]:
        return [{"j": j, "k": k, "r": r, "p": p} for (j, k), (r, p) in sorted(self.edges.items())]


def build_network(table, r_min: float, alpha: float = 0.05) -> CoexNetwork:
    """Edges between genes with ``r > r_min`` and ``p < alpha``."""
    X = np.asarray(getattr(table, "features", table), dtype=float)
    n, d = X.shape
    if n < 3:
        raise ValueError("need at least 3 samples")
    R = correlation_matrix(X)
    P = _r_pvalue(np.nan_to_num(R), n)
    jj, kk = np.triu_indices(d, k=1)
    r, p = R[jj, kk], P[jj, kk]
    keep = np.flatnonzero(np.isfinite(r) & (r > r_min) & (p < alpha))
    edges = {(int(jj[i]), int(kk[i])): (float(r[i]), float(p[i])) for i in keep}
    return CoexNetwork(edges, d, r_min, alpha)


def compare_networks(real: CoexNetwork, synth: CoexNetwork) -> Tuple[int, int, int]:
    """(correct, spurious, real edge count)."""
    if real.n_genes != synth.n_genes:
        raise NodeSetMismatch(f"{real.n_genes} vs {synth.n_genes} genes")
    E_r, E_s = real.edge_set, synth.edge_set
    return len(E_s & E_r), len(E_s - E_r), len(E_r)


# -- modules and group fold-changes -------------------------------------------

def detect_modules(network: CoexNetwork, min_size: int = 10) -> List[frozenset]:
    """Communities by greedy modularity on the r-weighted graph.

    Modules smaller than ``min_size`` are dropped; the result is sorted by
    decreasing size, then smallest member.
    """
    if not network.edges:
        raise EmptyNetwork("network has no edges")
    G = network.to_graph()
    comms = nx.community.greedy_modularity_communities(G, weight="weight")
    mods = [frozenset(int(g) for g in c) for c in comms if len(c) >= min_size]
    return sorted(mods, key=lambda m: (-len(m), min(m)))


def module_agreement(found: Sequence[frozenset], truth: Sequence[frozenset]) -> float:
    """Fraction of ground-truth members assigned to their best-matched module.

    Modules are matched one-to-one maximizing total overlap.
    """
    total = sum(len(t) for t in truth)
    if total == 0:
        return 1.0
    if not found:
        return 0.0
    M = np.array([[len(t & f) for f in found] for t in truth], dtype=float)
    rows, cols = linear_sum_assignment(-M)
    return float(M[rows, cols].sum() / total)


@dataclass(frozen=True)
class ModuleSet:
    modules: Tuple[frozenset, ...]
    gfc: np.ndarray
    groups: Tuple[Tuple[str, int], ...]
    column_order: Tuple[int, ...]
    adjacency: float

    def to_dict(self) -> dict:
        return {
            "modules": [sorted(m) for m in self.modules],
            "groups": [{"dataset": ds, "class": c} for ds, c in self.groups],
            "gfc": self.gfc.tolist(),
            "column_order": list(self.column_order),
            "same_class_adjacency": self.adjacency,
        }


def group_fold_changes(
    modules: Sequence[frozenset],
    real: LabeledTable,
    synth: LabeledTable,
    pseudocount: float = 1.0,
) -> ModuleSet:
    """Module-averaged log2 ratio of group mean to grand mean, groups = class x dataset.

    The grand mean pools every sample of both tables. Also returns an
    average-linkage column order and the fraction of synthetic groups whose
    nearest group (Euclidean over modules) is the real group of the same
    class.
    """
    modules = tuple(frozenset(m) for m in modules)
    C = max(real.n_classes, synth.n_classes)
    pooled = np.vstack([real.features, synth.features])
    grand = pooled.mean(axis=0)
    groups, cols = [], []
    for name, tab in (("real", real), ("synth", synth)):
        for c in range(C):
            rows = tab.labels == c
            if not rows.any():
                continue
            groups.append((name, c))
            cols.append(tab.features[rows].mean(axis=0))
    floor = 1e-12
    G = np.empty((len(modules), len(groups)))
    for g, mean_g in enumerate(cols):
        ratio = np.log2(np.maximum(mean_g + pseudocount, floor) / np.maximum(grand + pseudocount, floor))
        for m, genes in enumerate(modules):
            G[m, g] = ratio[sorted(genes)].mean()

    if len(groups) >= 2 and len(modules) >= 1:
        order = tuple(int(i) for i in leaves_list(linkage(G.T, method="average", metric="euclidean")))
    else:
        order = tuple(range(len(groups)))

    hits, synth_cols = 0, [i for i, (ds, _) in enumerate(groups) if ds == "synth"]
    if synth_cols and modules:
        D = cdist(G.T, G.T)
        np.fill_diagonal(D, np.inf)
        for i in synth_cols:
            # ties resolve toward the real same-class column
            best = np.flatnonzero(D[i] == D[i].min())
            target = [j for j in best if groups[j] == ("real", groups[i][1])]
            hits += bool(target)
        adjacency = hits / len(synth_cols)
    else:
        adjacency = float("nan")
    return ModuleSet(modules, G, tuple(groups), order, float(adjacency))
