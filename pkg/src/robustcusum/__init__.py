"""Minimax-robust sequential change-point detection for Gaussian streams.

Detectors are designed against convex uncertainty sets for the mean vector
and covariance matrix, by convex optimization; the resulting CUSUM
procedures come with certified thresholds and are evaluated by exact
formulas and Monte Carlo simulation.
"""

from .config import ExperimentConfig, load_bundled_config, load_config, parse_config, serialize_config
from .cusum import (
    ArraySource,
    CusumState,
    GaussianSource,
    StoppingResult,
    calibrate_threshold_mc,
    run_until_alarm,
    step,
    threshold_from_gamma,
)
from .errors import (
    CalibrationError,
    ConfigError,
    ConvergenceError,
    DimensionError,
    DomainError,
    NotPositiveDefiniteError,
    RobustCusumError,
    StreamExhaustedError,
)
from .gaussian import Gaussian, SeededStream, kl_divergence, log_likelihood_ratio, mahalanobis_sq, sample
from .lfp import AffineDetector, LfpSolution, SolverOptions, build_affine_detector, solve_lfp
from .quadratic import (
    ClassSetup,
    GeneralZ,
    QuadraticDetector,
    SaddleOptions,
    SaddleSolution,
    SingletonMean,
    build_quadratic_detector,
    compute_delta,
    default_theta_star,
    eval_phi_big,
    llr_detector,
    phi_support,
    solve_saddle,
)
from .sets import Box, L1Ball, L2Ball, MatrixInterval, SingletonPSD, SingletonVector, SpectralBall
from .simulate import (
    BoundReport,
    ChangeScenario,
    RunReport,
    estimate_arl,
    estimate_wdd,
    render_human,
    run_experiment,
    to_csv,
    verify_detector_bounds,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
