"""Spatial Bayesian retrieval of aerosol optical depth from multi-channel radiances.

The retrieval places an intrinsic Gaussian Markov random field prior on the
AOD field and Dirichlet priors on per-pixel aerosol mixing vectors, and
samples the posterior with Metropolis-within-Gibbs, either globally or in
overlapping patches that exchange summary statistics.
"""

from .diagnostics import DiagnosticsReport, PosteriorSummary, acceptance_report, autocorrelation, compute_rhat, diagnose, summarize
from .estimator import AODRetriever, check_radiance
from .exceptions import ConfigurationError, ConvergenceWarning, DomainError, FormatError
from .forward import (
    ForwardModel,
    RadianceTable,
    SurrogateModel,
    SurrogateParams,
    TableModel,
    build_table_from_surrogate,
    default_surrogate_params,
    eval_surrogate,
    eval_table,
    read_table,
    write_table,
)
from .lattice import Adjacency, BlockGrid, PatchLayout, build_adjacency, build_patch_layout
from .model import AerosolState, HyperState, RadianceBlock, log_likelihood, log_posterior, sigma_init
from .parallel import RoundConfig, RoundError, SummaryStats, average_overlaps, compute_summaries, run_parallel
from .sampler import ChainConfig, ChainRecord, ChainState, run_chain, run_chains
from .simgen import SimConfig, SimTruth, sample_gmrf, sample_theta_field, simulate_block
from .validation import ComparisonReport, GroundRecord, aggregate, angstrom_convert, compare_fields, match_overpass

__version__ = "0.1.0"

__all__ = [
    "AODRetriever", "check_radiance",
    "DiagnosticsReport", "PosteriorSummary", "acceptance_report", "autocorrelation", "compute_rhat",
    "diagnose", "summarize",
    "ConfigurationError", "ConvergenceWarning", "DomainError", "FormatError",
    "ForwardModel", "RadianceTable", "SurrogateModel", "SurrogateParams", "TableModel",
    "build_table_from_surrogate", "default_surrogate_params", "eval_surrogate", "eval_table",
    "read_table", "write_table",
    "Adjacency", "BlockGrid", "PatchLayout", "build_adjacency", "build_patch_layout",
    "AerosolState", "HyperState", "RadianceBlock", "log_likelihood", "log_posterior", "sigma_init",
    "RoundConfig", "RoundError", "SummaryStats", "average_overlaps", "compute_summaries", "run_parallel",
    "ChainConfig", "ChainRecord", "ChainState", "run_chain", "run_chains",
    "SimConfig", "SimTruth", "sample_gmrf", "sample_theta_field", "simulate_block",
    "ComparisonReport", "GroundRecord", "aggregate", "angstrom_convert", "compare_fields", "match_overpass",
]
