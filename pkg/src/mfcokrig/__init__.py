"""Multifidelity Gaussian-process emulation with high-dimensional spatial outputs.

Two autoregressive cokriging emulators share one estimator API: a separable
model with a sparse Cholesky prior on the output precision (`SepEmulator`,
whose p = 0 configuration is the conditionally independent parallel-partial
baseline) and a nonseparable basis-weight model (`NonsepEmulator`). The
`testbed` module provides the analytic contaminant-spill benchmark; `metrics`
the RMSPE / coverage / interval-length scoring.
"""

from .design import (
    DesignSet,
    NeighborSets,
    SpatialOrdering,
    build_neighbor_sets,
    latin_hypercube,
    maximin_order,
    nested_subsample,
)
from .exceptions import (
    ConditioningError,
    ConfigError,
    DataValidationError,
    EmulatorError,
    InvalidParameterError,
)
from .kernels import (
    CorrelationMatrix,
    CorrelationParams,
    correlation_matrix,
    cross_correlation_vector,
    matern_correlation,
    product_correlation,
    whiten,
)
from .mcmc import (
    Chain,
    ChainSettings,
    half_cauchy_logpdf,
    half_normal_logpdf,
    map_estimate,
    random_walk_mh,
)
from .metrics import MetricsReport, compute_metrics
from .nonsep import (
    NonsepEmulator,
    PcBasis,
    StandardizationStats,
    pca,
    reconstruct,
    standardize,
    sweep_components,
    unstandardize,
    weight_log_posterior,
)
from .sep import (
    CholeskyFactors,
    PredictiveSummary,
    SepEmulator,
    gls_estimates,
    level_log_posterior,
    neighbor_r_squared,
    posterior_ad,
    reconstruct_precision,
)
from .testbed import (
    EnvInput,
    SpaceTimeGrid,
    concentration,
    generate_experiment,
    hi_fidelity,
    lo_fidelity,
)

__version__ = "0.1.0"
