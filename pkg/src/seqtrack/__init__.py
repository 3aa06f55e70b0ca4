"""Joint sequential detection and trajectory estimation for targets moving on a Markov grid."""

from .asymptotics import (
    LambdaBounds,
    LambdaEstimate,
    estimate_lambda,
    kl_numeric,
    lambda_bounds_symmetric,
    lambda_upper_bounds,
    predicted_stopping_moments,
)
from .batch import BatchResult, run_batch
from .errors import ConfigError, ConvergenceError, NonErgodicError, StructureError, UsageError
from .harness import ExperimentConfig, MetricsReport, load_config, run_experiment
from .markov import (
    ChainReport,
    MarkovChain,
    build_gaussian_walk,
    gaussian_walk_matrix,
    kronecker_chain,
    sample_trajectory,
    stationary_distribution,
    trajectory_log_prior,
    validate_chain,
)
from .observation import GridExponentialModel, ObservationModel, db_to_linear, linear_to_db
from .radar import FssConfig, RadarGrid, build_radar_chain, calibrate_fss_threshold, run_fss
from .sequential import (
    DecisionRecord,
    Outcome,
    SprtConfig,
    SprtState,
    Truncation,
    run_sequential,
    thresholds_from_strength,
)
from .streams import TrialStream, derive_trial_seed

__version__ = "0.1.0"
