"""Block sparse canonical correlation analysis.

Two-stage estimation of d canonical direction pairs jointly: stage 1 finds
per-view sparsity patterns by hinge-gradient sweeps over orthonormal
frames (L1 or L0 hinge, two-view, multi-view, or accessory-directed);
stage 2 refines the active entries by masked alternating polar updates.
Includes permutation-test threshold tuning, a planted-support synthetic
generator, and a CLI (``blockcca``) wrapping all of it.
"""

from .errors import (
    BlockCCAError,
    ConfigError,
    DeadGradient,
    DegenerateCovariate,
    DimensionError,
    EmptySupport,
    NonFinite,
    ParseError,
    RaggedRows,
    RankDeficient,
)
from .estimators import BlockCCA, DirectedBlockCCA, MultiViewBlockCCA
from .io import load_matrix, parse_table, write_json, write_table
from .linalg import (
    column_stats,
    cross_covariance,
    derived_rng,
    orthonormality_defect,
    pearson,
    polar,
    random_stiefel,
    standardize,
)
from .model import (
    DirectedConfig,
    FitResult,
    MultiViewSparsityParams,
    SparsityParams,
    SparsityPattern,
    SpectralWeights,
    ViewMatrix,
    canonical_correlations,
    objective_directed_surrogate,
    objective_l0_surrogate,
    objective_l1_surrogate,
    objective_multiview_surrogate,
    objective_trace_block,
    oriented_cross_covariance,
)
from .pattern import (
    PatternProblem,
    PatternResult,
    estimate_patterns,
    gamma_from_column_norms,
    shrink_covariance,
    support_directed,
    support_l0,
    support_l1,
    support_multiview,
    sweep_directed,
    sweep_l0,
    sweep_l1,
    sweep_multiview,
)
from .refine import RefineResult, refine_directed, refine_multiview, refine_two_view
from .simgen import (
    SimConfig,
    SimInstance,
    SimTruth,
    SweepResult,
    SweepRow,
    eval_truth_correlation,
    eval_within_orthogonality,
    generate_views,
    running_median,
    sweep_sigma,
)
from .tune import (
    PermutationReport,
    TuneCell,
    TuneResult,
    permutation_test,
    select_gamma,
    tune_grid,
)

__version__ = "0.1.0"

__all__ = [
    "__version__",
    "BlockCCAError",
    "ConfigError",
    "DeadGradient",
    "DegenerateCovariate",
    "DimensionError",
    "EmptySupport",
    "NonFinite",
    "ParseError",
    "RaggedRows",
    "RankDeficient",
    "BlockCCA",
    "DirectedBlockCCA",
    "MultiViewBlockCCA",
    "load_matrix",
    "parse_table",
    "write_json",
    "write_table",
    "column_stats",
    "cross_covariance",
    "derived_rng",
    "orthonormality_defect",
    "pearson",
    "polar",
    "random_stiefel",
    "standardize",
    "DirectedConfig",
    "FitResult",
    "MultiViewSparsityParams",
    "SparsityParams",
    "SparsityPattern",
    "SpectralWeights",
    "ViewMatrix",
    "canonical_correlations",
    "objective_directed_surrogate",
    "objective_l0_surrogate",
    "objective_l1_surrogate",
    "objective_multiview_surrogate",
    "objective_trace_block",
    "oriented_cross_covariance",
    "PatternProblem",
    "PatternResult",
    "estimate_patterns",
    "gamma_from_column_norms",
    "shrink_covariance",
    "support_directed",
    "support_l0",
    "support_l1",
    "support_multiview",
    "sweep_directed",
    "sweep_l0",
    "sweep_l1",
    "sweep_multiview",
    "RefineResult",
    "refine_directed",
    "refine_multiview",
    "refine_two_view",
    "SimConfig",
    "SimInstance",
    "SimTruth",
    "SweepResult",
    "SweepRow",
    "eval_truth_correlation",
    "eval_within_orthogonality",
    "generate_views",
    "running_median",
    "sweep_sigma",
    "PermutationReport",
    "TuneCell",
    "TuneResult",
    "permutation_test",
    "select_gamma",
    "tune_grid",
]
