"""Bayesian regime-switching spatial clustering of areal time series."""

from .errors import ConfigError, DataError, NumericalError
from .estimator import ArealClusterer
from .grid import (
    GridTopology,
    LerouxPrecision,
    boundary_length,
    build_grid,
    leroux_precision,
    subgrid,
    total_boundary,
)
from .model import (
    Dataset,
    Hyperparameters,
    ModelState,
    RegimeState,
    ScenarioSpec,
    elicit_inverse_gamma,
    log_likelihood,
    log_prior,
    multi_regime_scenario,
    sample_observations,
    scenario_by_name,
    simulate_dataset,
    single_regime_scenario,
)
from .partitions import (
    Partition,
    PriorSpec,
    allocation_log_weights,
    enumerate_prior,
    log_prior_unnormalized,
    rand_index,
    sample_prior,
    vi_distance,
)
from .sampler import ChainOutput, SamplerConfig, gibbs_iteration, run_chain
from .summaries import (
    FitScores,
    coclustering,
    fit_scores,
    fitted_band,
    lpml,
    modal_cluster_counts,
    rand_index_posterior,
    vi_point_estimate,
    waic,
)
from .timeline import HarmonicDesign, RegimeSchedule

__version__ = "0.1.0"
