"""Sparse precision-matrix estimation with an l1 penalty on partial correlations."""
from .d_solver import DSolveConfig, DSolveResult, ScalingProblem, build_scaling_problem, d_bounds
from .d_solver import solve_d_diagonal_newton, solve_d_exact_newton
from .estimator import (
    FitResult,
    SolverConfig,
    Uniqueness,
    four_over_n_alpha,
    consistency_bound_check,
    explicit_d_from_r,
    fit,
    fit_covariance,
    glasso_fit,
    objective,
    stationarity_residual,
    uniqueness_certificate,
)
from .exceptions import ConfigurationError, InvalidInputError, NumericalError, PCGLassoError
from .irrepresentability import (
    IrrReport,
    SupportSet,
    gamma_tilde,
    hub_irr_closed_form,
    irr_glasso,
    irr_heatmap,
    irr_pcglasso,
    irr_report,
)
from .matrix_core import (
    CorrelationMatrix,
    PrecisionFactorization,
    SampleData,
    compose_precision,
    correlation_from_covariance,
    correlation_from_data,
    factorize_precision,
    min_eigenvalue,
    partial_correlations,
)
from .model_select import CvResult, PathResult, bic_score, cross_validate, ebic_score, gaussian_loglik, lambda_path
from .r_solver import DualFeasibilityReport, check_dual_feasibility, soft_threshold, solve_r
from .simulation import (
    StudyConfig,
    StudyReport,
    bench_d_solvers,
    block_hub_precision,
    chain_precision,
    general_hub_precision,
    hub_precision,
    rmse_metrics,
    run_study,
    sample_gaussian,
    sign_accuracy,
)

__version__ = "0.1.0"
