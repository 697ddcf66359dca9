"""Drift and diffusion estimation for linear additive-noise SDEs from snapshots."""

from .aeot import Coupling, build_cost_matrix, coupling_moments, sample_paths, sinkhorn
from .causal import CausalGraph, extract_graph, mae, pearson_corr, shd_confounders, shd_drift
from .errors import (
    AlignmentError,
    AppexError,
    ConvergenceError,
    DataFormatError,
    DegenerateCouplingError,
    DimensionError,
    DivergenceError,
    ExactEstimatorError,
    GenerationError,
    NumericError,
    RankDeficiencyError,
    SingularMatrixError,
)
from .loop import AppexConfig, AppexResult, IterationRecord, nll_diagnostic, run_appex
from .mle import mle_diffusion, mle_diffusion_exact_1d, mle_drift, mle_drift_exact_1d
from .sde import InitialDistribution, SdeParams, gen_default_initial, gen_random_sde, reference_kernel
from .simulate import MarginalDataset, TrajectorySet, euler_maruyama, subsample_marginals

__version__ = "0.1.0"
