"""Byzantine-robust mean aggregation with quasi-linear spectral filtering."""

from .aggregators import (
    AggregationReport,
    AllSamplesRemoved,
    FilterConfig,
    aggregate_weak,
    bias_bound,
    filter_chunked,
    filter_convergence,
    filter_threshold,
    rand_eigen,
    removal_probabilities,
    sample_floor,
    threshold_gamma,
)
from .attacks import (
    AttackSpec,
    CorruptedSet,
    ThresholdBelowBenignVariance,
    apply_attack,
    corrupted_count,
)
from .fedsim import FedConfig, FedRoundError, FedState, FedTask, RoundTrace, run
from .jl import JLProjection, jl_dim, project, project_rows, project_rows_with
from .numeric import (
    EigenEstimate,
    EmptySampleSet,
    RngStream,
    SampleSet,
    covariance,
    covariance_matvec,
    dominant_eigen,
    mean,
)
from .stability import StabilityReport, check_stability, default_delta

__version__ = "0.1.0"

__all__ = [
    "AggregationReport",
    "AllSamplesRemoved",
    "AttackSpec",
    "CorruptedSet",
    "EigenEstimate",
    "EmptySampleSet",
    "FedConfig",
    "FedRoundError",
    "FedState",
    "FedTask",
    "FilterConfig",
    "JLProjection",
    "RngStream",
    "RoundTrace",
    "SampleSet",
    "StabilityReport",
    "ThresholdBelowBenignVariance",
    "aggregate_weak",
    "apply_attack",
    "bias_bound",
    "check_stability",
    "corrupted_count",
    "covariance",
    "covariance_matvec",
    "default_delta",
    "dominant_eigen",
    "filter_chunked",
    "filter_convergence",
    "filter_threshold",
    "jl_dim",
    "mean",
    "project",
    "project_rows",
    "project_rows_with",
    "rand_eigen",
    "removal_probabilities",
    "run",
    "sample_floor",
    "threshold_gamma",
    "__version__",
]
