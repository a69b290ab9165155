"""Sparse composite likelihood selection."""

from .analysis import FitResult, fit, fit_path, subsample_rmse
from .covariance import (
    ScoreCovariance,
    ScoreMatrix,
    build_score_matrix,
    empirical_covariance,
    gershgorin_eigen_bounds,
)
from .estimation import PrelimEstimate, SolverOptions, solve_all, solve_marginal
from .inference import SandwichVariance, chi2_lambda_guidance, sandwich, wald_rank
from .io import ConfigError, DataError, Dataset, export_graph, load_csv, save_csv, standardize
from .metrics import (
    EfficiencyReport,
    SelectionMetrics,
    efficiency_curve,
    efficiency_report,
    oracle_mle,
    rmse,
    selection_metrics,
)
from .score_models import (
    GaussianLocationModel,
    PairwiseCorrelationModel,
    ProbitRegressionModel,
    ScoreModel,
    gaussian_score,
    pairwise_corr_score,
    probit_score,
)
from .selector import (
    CompositionRule,
    PenaltyWeights,
    SelectionPath,
    closed_form_active,
    closed_form_identity,
    exhaustive_minimizer,
    coordinate_descent,
    kkt_check,
    lambda_for_target,
    lambda_max,
    lambda_path,
    objective,
    population_rule,
    soft_threshold,
    z_statistics,
)

__version__ = "0.1.0"
