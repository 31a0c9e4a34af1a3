from .bio import (
    CoexNetwork,
    DeResult,
    ModuleSet,
    build_network,
    compare_networks,
    de_genes,
    de_tpr_fpr,
    detect_modules,
    group_fold_changes,
    module_agreement,
    pearson,
    rank_test,
)
from .statistical import histogram_intersection, knn_distance_score, knn_distances, overlap_score
from .utility import SoftmaxRegression, train_eval

__all__ = [
    "CoexNetwork",
    "DeResult",
    "ModuleSet",
    "SoftmaxRegression",
    "build_network",
    "compare_networks",
    "de_genes",
    "de_tpr_fpr",
    "detect_modules",
    "group_fold_changes",
    "histogram_intersection",
    "knn_distance_score",
    "knn_distances",
    "module_agreement",
    "overlap_score",
    "pearson",
    "rank_test",
    "train_eval",
]
