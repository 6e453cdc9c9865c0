"""Scikit-learn style front end to the samplers.

>>> from bayesaod import AODRetriever, SimConfig, SurrogateModel, simulate_block
>>> block, truth = simulate_block(SimConfig(rows=8, cols=8, seed=1), SurrogateModel())
>>> est = AODRetriever(iterations=200, burn_in=100).fit(block)   # doctest: +SKIP
>>> est.tau_mean_.shape                                          # doctest: +SKIP
(8, 8)
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .diagnostics import diagnose, summarize
from .exceptions import ConfigurationError
from .forward import ForwardModel, SurrogateModel, TableModel, build_table_from_surrogate, default_surrogate_params
from .lattice import BlockGrid, build_patch_layout
from .model import RadianceBlock
from .parallel import RoundConfig, run_parallel
from .sampler import ChainConfig, run_chain, run_chains

__all__ = ["AODRetriever", "check_radiance", "resolve_forward_model"]

DEFAULT_TABLE_NODES = np.linspace(0.0, 3.0, 31)


def resolve_forward_model(spec) -> ForwardModel:
    """Accept a ForwardModel, ``"surrogate"`` or ``"table"`` (tabulated surrogate)."""
    if isinstance(spec, ForwardModel):
        return spec
    if spec == "surrogate":
        return SurrogateModel()
    if spec == "table":
        return TableModel(build_table_from_surrogate(default_surrogate_params(), DEFAULT_TABLE_NODES))
    raise ConfigurationError(f"unknown forward model {spec!r}; use 'surrogate', 'table' or a ForwardModel")


def check_radiance(X, n_components: int, resolution_km: float = 4.4) -> RadianceBlock:
    """Validate observations and return a :class:`RadianceBlock`.

    ``X`` is either a RadianceBlock or an array of shape ``(rows, cols, C)``
    in which a cell whose radiances are all NaN is cloud-masked.
    """
    if isinstance(X, RadianceBlock):
        if X.n_components != n_components:
            raise ConfigurationError(
                f"block declares {X.n_components} components, forward model has {n_components}")
        return X
    a = np.asarray(X, dtype=float)
    if a.ndim != 3:
        raise ConfigurationError(f"expected a (rows, cols, channels) array, got shape {a.shape}")
    nan = np.isnan(a)
    cloudy = nan.all(axis=2)
    if np.any(nan.any(axis=2) & ~cloudy):
        raise ConfigurationError("a cell has some but not all channels missing")
    if np.any(np.isinf(a)):
        raise ConfigurationError("radiances must be finite")
    grid = BlockGrid(a.shape[0], a.shape[1], resolution_km, ~cloudy)
    return RadianceBlock(grid, a.reshape(-1, a.shape[2])[grid.clear_cells], n_components)


class AODRetriever(BaseEstimator):
    """Bayesian AOD and mixing-vector retrieval for one radiance block.

    Parameters
    ----------
    forward_model : {"surrogate", "table"} or ForwardModel, default="surrogate"
    iterations, burn_in, thinning, seed :
        Chain length settings; see :class:`~bayesaod.sampler.ChainConfig`.
    n_chains : int, default=1
        Independent chains from over-dispersed starting points.  With two or
        more chains the potential scale reduction of the log posterior is
        reported and pooled samples are summarized.
    parallel : bool, default=False
        Use the patch-parallel sampler (single chain only).
    workers : int, default=1
        Thread count for chains or patches.
    rhat_threshold : float, default=1.1
    adapt_acceptance : bool, default=True
    alpha_step : float, default=0.2
    resolution_km : float, default=4.4
        Pixel size recorded for array inputs.

    Attributes
    ----------
    block_ : RadianceBlock
    records_ : list of ChainRecord
    summary_ : PosteriorSummary
    diagnostics_ : DiagnosticsReport
    tau_mean_, tau_sd_ : ndarray (rows, cols)
        Posterior mean and SD of AOD; NaN on cloudy cells.
    theta_mean_ : ndarray (rows, cols, M)
    kappa_mean_ : float
    converged_ : bool or None
        None when convergence was not assessed (a single chain).
    """

    def __init__(self, forward_model="surrogate", iterations=3000, burn_in=1000, thinning=1, seed=0,
                 n_chains=1, parallel=False, workers=1, rhat_threshold=1.1, adapt_acceptance=True,
                 alpha_step=0.2, resolution_km=4.4):
        self.forward_model = forward_model
        self.iterations = iterations
        self.burn_in = burn_in
        self.thinning = thinning
        self.seed = seed
        self.n_chains = n_chains
        self.parallel = parallel
        self.workers = workers
        self.rhat_threshold = rhat_threshold
        self.adapt_acceptance = adapt_acceptance
        self.alpha_step = alpha_step
        self.resolution_km = resolution_km

    def _chain_config(self) -> ChainConfig:
        return ChainConfig(iterations=self.iterations, burn_in=self.burn_in, thinning=self.thinning,
                           seed=self.seed, adapt_acceptance=self.adapt_acceptance,
                           alpha_step=self.alpha_step)

    def fit(self, X, y=None):
        """Run the sampler on ``X``; ``y`` is ignored."""
        fm = resolve_forward_model(self.forward_model)
        block = check_radiance(X, fm.n_components, self.resolution_km)
        config = self._chain_config()
        if self.n_chains < 1:
            raise ConfigurationError("n_chains must be >= 1")
        if config.n_samples < 1:
            raise ConfigurationError("the run retains no samples; raise iterations or lower burn_in")
        if self.parallel:
            if self.n_chains != 1:
                raise ConfigurationError("the patch-parallel sampler runs a single chain")
            layout = build_patch_layout(block.grid, *_auto_patches(block.grid))
            records = [run_parallel(block, fm, layout, RoundConfig(workers=self.workers), config)]
        elif self.n_chains == 1:
            records = [run_chain(block, fm, config)]
        else:
            records = run_chains(block, fm, config, self.n_chains, workers=self.workers)
        self.block_ = block
        self.forward_model_ = fm
        self.records_ = records
        self.summary_ = summarize(_pool(records))
        self.diagnostics_ = diagnose(records, rhat_threshold=self.rhat_threshold)
        self.converged_ = self.diagnostics_.converged
        grid = block.grid
        self.tau_mean_ = grid.to_grid(self.summary_.tau_mean)
        self.tau_sd_ = grid.to_grid(self.summary_.tau_sd)
        M = fm.n_components
        self.theta_mean_ = np.stack([grid.to_grid(self.summary_.theta_mean[:, m]) for m in range(M)], axis=2)
        self.kappa_mean_ = self.summary_.kappa_mean
        return self

    def predict(self, X=None):
        """Posterior-mean AOD grid for ``X`` (the fitted block if omitted)."""
        check_is_fitted(self, "tau_mean_")
        if X is None:
            return self.tau_mean_
        block = check_radiance(X, self.forward_model_.n_components, self.resolution_km)
        if block == self.block_:
            return self.tau_mean_
        raise ConfigurationError("predict() only serves the fitted block; call fit_predict(X) for new data")

    def fit_predict(self, X, y=None):
        return self.fit(X).tau_mean_


def _auto_patches(grid: BlockGrid):
    """Patch counts giving roughly 16-pixel strides (2 x 8 on a 32 x 128 block)."""
    return max(1, round(grid.rows / 16)), max(1, round(grid.cols / 16))


class _Pooled:
    def __init__(self, records):
        for name in ("tau", "theta", "kappa", "alpha", "sigma2"):
            setattr(self, name, np.concatenate([getattr(r, name) for r in records]))


def _pool(records):
    return records[0] if len(records) == 1 else _Pooled(records)
