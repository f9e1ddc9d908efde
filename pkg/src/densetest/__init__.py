"""Minimax-optimal testing of a single coefficient in a dense high-dimensional
linear model, with numeric oracles for the matching detection lower bounds and
a reproducible Monte Carlo harness."""

from .datagen import (
    Dataset,
    LTheta,
    PriorFamily,
    build_prior_member,
    enumerate_deltas,
    l_factor,
    load_dataset,
    prior_family,
    sample_dataset,
    save_dataset,
    scale_dataset,
)
from .errors import (
    DensetestError,
    DomainError,
    FactorizationError,
    InvalidRegimeError,
    InvalidStructureError,
    NotPositiveDefiniteError,
    PipelineError,
)
from .harness import ExperimentConfig, ResultRow, derive_seed, run_experiment
from .inference import (
    NuisanceEstimates,
    TestOutcome,
    TuningConstants,
    fit_pipeline,
    plug_in_estimator,
    scaled_config,
    screen_correlations,
    select_screened,
    test_beta,
    tuning_constants,
)
from .lowerbound import (
    DetectionBounds,
    bernstein_tail_check,
    chi2_mixture,
    chi2_pair,
    detection_bounds,
    gaussian_kl,
    hypergeo_sum,
    likelihood_ratio,
    qj_gram_closed,
    re_constant_estimate,
    rho_constant,
)
from .model import (
    MembershipResult,
    ModelTheta,
    PrecisionRow,
    SigmaFactor,
    SpaceConfig,
    SplitPlan,
    build_sigma,
    decompose_sigma,
    in_theta_s,
    in_theta_tilde,
    precision_first_row,
    scale_theta,
    split_plan,
)
from .solvers import (
    SolveReport,
    SolverSettings,
    direction_solver,
    lasso,
    projected_l1,
    soft_threshold,
    spectral_norm,
)

__version__ = "0.1.0"
