"""Patch-parallel Metropolis-within-Gibbs with summary-statistic exchange.

The block is tiled with overlapping patches.  Each round, every patch runs
the sweep for a fixed number of iterations on its own pixels, drawing the
hyperparameters from their conditionals given the *global* summary
statistics frozen at the start of the round.  The coordinator then averages
the overlapping pixels, recomputes the summaries over the whole block and
starts the next round.

Patch ``k`` in round ``r`` draws from
``default_rng(SeedSequence(config.seed, spawn_key=(r, k)))``, and merges
reduce in patch-index order, so results do not depend on the worker count.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .exceptions import ConfigurationError
from .forward import ForwardModel
from .lattice import Adjacency, BlockGrid, PatchLayout, build_adjacency, build_patch_layout
from .model import AerosolState, HyperState, RadianceBlock, log_posterior
from .sampler import (
    ChainConfig,
    ChainRecord,
    ChainState,
    _adapt,
    _alpha_mh_step,
    _Problem,
    _prepare,
    _tau_step,
    _theta_step,
    draw_kappa,
    gibbs_update_sigma2,
)

__all__ = [
    "SummaryStats",
    "RoundConfig",
    "RoundError",
    "compute_summaries",
    "average_overlaps",
    "patch_pixels",
    "run_parallel",
]

logger = logging.getLogger(__name__)


class RoundError(RuntimeError):
    """A patch sampler failed; the round was abandoned without merging."""

    def __init__(self, round_index, patch_index, cause):
        self.round_index = round_index
        self.patch_index = patch_index
        super().__init__(f"patch {patch_index} failed in round {round_index}: {cause!r}")


@dataclass
class SummaryStats:
    """Block-wide statistics that the hyperparameter conditionals depend on."""

    t_kappa: float
    t_sigma: np.ndarray
    t_alpha: np.ndarray
    n_pixels: int


@dataclass(frozen=True)
class RoundConfig:
    iterations_per_round: int = 50
    rounds: int | None = None
    workers: int = 1

    def __post_init__(self):
        if self.iterations_per_round < 1:
            raise ConfigurationError("iterations_per_round must be >= 1")
        if self.rounds is not None and self.rounds < 0:
            raise ConfigurationError("rounds must be non-negative")
        if self.workers < 1:
            raise ConfigurationError("workers must be >= 1")


def compute_summaries(block: RadianceBlock, state: AerosolState, fm: ForwardModel,
                      adj: Adjacency, lrt=None) -> SummaryStats:
    lrt = fm(state.tau, state.theta) if lrt is None else lrt
    return SummaryStats(
        t_kappa=adj.edge_sum_sq(state.tau),
        t_sigma=((block.radiance - lrt) ** 2).sum(axis=0),
        t_alpha=np.log(state.theta).sum(axis=0),
        n_pixels=block.n_pixels,
    )


def patch_pixels(layout: PatchLayout, grid: BlockGrid) -> list[np.ndarray]:
    """Global clear-pixel indices of each patch, in patch-local row-major order."""
    index = grid.clear_index.reshape(grid.shape)
    out = []
    for p in layout.patches:
        sub = index[p.row0:p.row1, p.col0:p.col1].ravel()
        out.append(sub[sub >= 0].astype(np.int64))
    return out


def average_overlaps(layout: PatchLayout, per_patch_states, grid: BlockGrid) -> AerosolState:
    """Merge patch states into one block state.

    Pixels held by several patches get the arithmetic mean of their copies
    (theta renormalized to the simplex); pixels held by one patch, or whose
    copies all agree, are copied verbatim.
    """
    pix = patch_pixels(layout, grid)
    if len(per_patch_states) != len(pix):
        raise ConfigurationError("need one state per patch")
    P = grid.n_clear
    M = per_patch_states[0].theta.shape[1]
    count = np.zeros(P, dtype=np.int64)
    tau_sum = np.zeros(P)
    theta_sum = np.zeros((P, M))
    tau_first = np.full(P, np.nan)
    theta_first = np.full((P, M), np.nan)
    agree = np.ones(P, dtype=bool)
    for idx, st in zip(pix, per_patch_states):
        if st.tau.shape[0] != idx.size:
            raise ConfigurationError("patch state size does not match its pixels")
        fresh = count[idx] == 0
        tau_first[idx[fresh]] = st.tau[fresh]
        theta_first[idx[fresh]] = st.theta[fresh]
        old = ~fresh
        agree[idx[old]] &= (tau_first[idx[old]] == st.tau[old]) & np.all(
            theta_first[idx[old]] == st.theta[old], axis=1)
        count[idx] += 1
        tau_sum[idx] += st.tau
        theta_sum[idx] += st.theta
    if np.any(count == 0):
        raise ConfigurationError("patch layout leaves clear pixels uncovered")
    tau = tau_sum / count
    theta = theta_sum / count[:, None]
    theta /= theta.sum(axis=1, keepdims=True)
    verbatim = agree | (count == 1)
    tau[verbatim] = tau_first[verbatim]
    theta[verbatim] = theta_first[verbatim]
    return AerosolState(tau, theta)


class _PatchSampler:
    """Owns one patch's pixels, hyperparameters and proposal widths."""

    def __init__(self, k, idx, grid_patch, block, fm, hyper: HyperState, config: ChainConfig):
        self.k = k
        self.idx = idx
        adj = build_adjacency(grid_patch)
        self.prob = _Problem(block.radiance[idx], adj, grid_patch.column_major_order(), fm)
        self.hyper = hyper.copy()
        self.tau_scale = 1.0
        self.alpha_step = np.full(hyper.alpha.size, config.alpha_step)
        self.config = config

    def run_round(self, r, tau, theta, lrt, stats: SummaryStats, n_iter, record_offset, thin, adapt):
        """Sweep ``n_iter`` times; ``record_offset`` is None during burn-in."""
        cfg = self.config
        rng = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(r, self.k)))
        state = AerosolState(tau[self.idx], theta[self.idx])
        st = ChainState(state, self.hyper, lrt[self.idx].copy(), self.prob.adj, rng,
                        self.prob.support, tau_scale=self.tau_scale, alpha_step=self.alpha_step)
        P = stats.n_pixels
        M = self.hyper.alpha.size
        acc = np.zeros((n_iter, 3), dtype=np.int64)
        samples = []
        window = {"tau": [0, 0], "alpha": [np.zeros(M, np.int64), np.zeros(M, np.int64)]}
        h = self.hyper
        for i in range(n_iter):
            n_tau, _ = _tau_step(self.prob, st, h.kappa, h.sigma2, st.tau_scale, rng)
            n_theta, _ = _theta_step(self.prob, st, h.alpha, h.sigma2, rng)
            n_alpha = 0
            if not cfg.fix_hyper:
                h.sigma2 = gibbs_update_sigma2(stats.t_sigma, P, rng, cfg.sigma2_floor, cfg.sigma2_prior)
                if stats.t_kappa > 0:
                    h.kappa = draw_kappa(stats.t_kappa, P, rng, cfg.kappa_prior)
                # a constant field (typically the initial state) keeps the current kappa
                for m in range(M):
                    ok = _alpha_mh_step(h.alpha, m, stats.t_alpha, P, st.alpha_step[m], rng)
                    window["alpha"][0][m] += ok
                    window["alpha"][1][m] += 1
                    n_alpha += ok
            acc[i] = (n_tau, n_theta, n_alpha)
            window["tau"][0] += n_tau
            window["tau"][1] += self.idx.size
            # same retuning schedule as the global chain, counted in round-local iterations
            if adapt and (i + 1) % cfg.adapt_interval == 0:
                _adapt(st, window, cfg.target_band)
                window = {"tau": [0, 0], "alpha": [np.zeros(M, np.int64), np.zeros(M, np.int64)]}
            if record_offset is not None and (record_offset + i + 1) % thin == 0:
                samples.append((i, st.state.tau.copy(), st.state.theta.copy(),
                                h.kappa, h.alpha.copy(), h.sigma2.copy()))
        self.tau_scale = st.tau_scale
        return st.state, acc, samples


def run_parallel(block: RadianceBlock, fm: ForwardModel, layout: PatchLayout | None = None,
                 round_config: RoundConfig | None = None, chain_config: ChainConfig | None = None,
                 init: tuple[AerosolState, HyperState] | None = None) -> ChainRecord:
    """Patch-parallel sampler; returns a record of merged block states.

    The run has ``ceil(iterations / iterations_per_round)`` rounds (unless
    ``round_config.rounds`` is given) and discards the first
    ``ceil(burn_in / iterations_per_round)`` rounds.  ``log_posterior`` holds
    one value per round, evaluated on the merged state; the recorded
    hyperparameters are those of patch 0.

    Raises
    ------
    RoundError
        If any patch sampler fails.
    """
    chain_config = ChainConfig() if chain_config is None else chain_config
    round_config = RoundConfig() if round_config is None else round_config
    grid = block.grid
    layout = build_patch_layout(grid) if layout is None else layout
    if layout.grid_shape != grid.shape:
        raise ConfigurationError("patch layout does not match the block")
    prob, state, hyper = _prepare(block, fm, chain_config, init, None)
    adj = prob.adj
    ipr = round_config.iterations_per_round
    n_rounds = (round_config.rounds if round_config.rounds is not None
                else math.ceil(chain_config.iterations / ipr))
    burn_rounds = min(math.ceil(chain_config.burn_in / ipr), n_rounds)
    thin = chain_config.thinning
    pix = patch_pixels(layout, grid)
    samplers = [_PatchSampler(k, idx, grid.subgrid(p.row0, p.row1, p.col0, p.col1),
                              block, fm, hyper, chain_config)
                for k, (p, idx) in enumerate(zip(layout.patches, pix))]

    P, C, M = block.n_pixels, block.n_channels, fm.n_components
    lrt = fm(state.tau, state.theta)
    logp = [log_posterior(block, state, hyper, fm, adj, lrt=lrt)]
    acc_rows = []
    rec = {"tau": [], "theta": [], "kappa": [], "alpha": [], "sigma2": [], "iter": []}
    workers = min(round_config.workers, len(samplers))
    pool = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None
    try:
        for r in range(n_rounds):
            stats = compute_summaries(block, state, fm, adj, lrt)
            burning = r < burn_rounds
            args = (state.tau, state.theta, lrt, stats, ipr, None if burning else (r - burn_rounds) * ipr, thin,
                    burning and chain_config.adapt_acceptance)
            if pool is None:
                futures = None
                results = []
                for s in samplers:
                    try:
                        results.append(s.run_round(r, *args))
                    except Exception as exc:
                        raise RoundError(r, s.k, exc) from exc
            else:
                futures = [pool.submit(s.run_round, r, *args) for s in samplers]
                results = []
                for s, f in zip(samplers, futures):
                    try:
                        results.append(f.result())
                    except Exception as exc:
                        raise RoundError(r, s.k, exc) from exc

            acc_rows.append(sum(res[1] for res in results))
            if not burning:
                n_rec = len(results[0][2])
                for j in range(n_rec):
                    merged = average_overlaps(
                        layout, [AerosolState(res[2][j][1], res[2][j][2]) for res in results], grid)
                    _, _, _, kap, alp, sig = results[0][2][j]
                    rec["tau"].append(merged.tau)
                    rec["theta"].append(merged.theta)
                    rec["kappa"].append(kap)
                    rec["alpha"].append(alp)
                    rec["sigma2"].append(sig)
                    rec["iter"].append(r * ipr + results[0][2][j][0] + 1)
            state = average_overlaps(layout, [res[0] for res in results], grid)
            lrt = fm(state.tau, state.theta, check=False)
            hyper = samplers[0].hyper
            logp.append(log_posterior(block, state, hyper, fm, adj, lrt=lrt))
            logger.debug("round %d: log posterior %.3f", r, logp[-1])
    finally:
        if pool is not None:
            pool.shutdown()

    acc = np.concatenate(acc_rows) if acc_rows else np.zeros((0, 3), dtype=np.int64)
    n_it = acc.shape[0]
    n_att = sum(idx.size for idx in pix)
    S = len(rec["tau"])
    return ChainRecord(
        tau=np.array(rec["tau"]).reshape(S, P),
        theta=np.array(rec["theta"]).reshape(S, P, M),
        kappa=np.array(rec["kappa"], dtype=float),
        alpha=np.array(rec["alpha"]).reshape(S, M),
        sigma2=np.array(rec["sigma2"]).reshape(S, C),
        sample_iterations=np.array(rec["iter"], dtype=np.int64),
        log_posterior=np.array(logp),
        accept_log={"tau": acc[:, 0], "theta": acc[:, 1], "alpha": acc[:, 2]},
        attempt_log={"tau": np.full(n_it, n_att, np.int64), "theta": np.full(n_it, n_att, np.int64),
                     "alpha": np.full(n_it, 0 if chain_config.fix_hyper else M * len(samplers), np.int64)},
        burn_in=burn_rounds * ipr,
        final_state=state.copy(),
        final_hyper=samplers[0].hyper.copy(),
        tau_scale=samplers[0].tau_scale,
        alpha_step=samplers[0].alpha_step.copy(),
    )
