"""Covariate-balanced A/B(/n) test designs via a kernel-density balance criterion."""

__version__ = "0.1.0"

from .bandwidth import (
    BandwidthState,
    CovarianceStats,
    rule_of_thumb,
    shrinkage_covariance,
    update_inverse,
)
from .data import CovariateSet, Partition, balanced_sizes
from .ga import (
    GaConfig,
    OptimizeResult,
    Population,
    crossover,
    crossover_permutations,
    encode_permutation,
    mutate,
    optimize,
    select_parent,
)
from .kernel import (
    CriterionCache,
    GridSpec,
    KernelGram,
    build_criterion_cache,
    compute_gram,
    criterion,
    criterion_by_quadrature,
    criterion_delta,
    criterion_streaming,
    extend_gram,
    kde_eval,
    swapped_partition,
)
from .online import OnlineState, admissible_profiles, assign_batch, init_online
from .pca import PcaState, PcaTarget, fit_pca, inverse_transform, transform, update_pca

__all__ = [
    "__version__",
    "BandwidthState",
    "CovarianceStats",
    "CovariateSet",
    "CriterionCache",
    "GaConfig",
    "GridSpec",
    "KernelGram",
    "OnlineState",
    "OptimizeResult",
    "Partition",
    "PcaState",
    "PcaTarget",
    "admissible_profiles",
    "assign_batch",
    "balanced_sizes",
    "build_criterion_cache",
    "compute_gram",
    "criterion",
    "criterion_by_quadrature",
    "criterion_delta",
    "criterion_streaming",
    "crossover",
    "crossover_permutations",
    "encode_permutation",
    "extend_gram",
    "fit_pca",
    "init_online",
    "inverse_transform",
    "kde_eval",
    "mutate",
    "optimize",
    "rule_of_thumb",
    "select_parent",
    "shrinkage_covariance",
    "swapped_partition",
    "transform",
    "update_inverse",
    "update_pca",
]
