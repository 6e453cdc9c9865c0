"""Global Metropolis-within-Gibbs sampler.

One iteration performs, in this order: an M-H update of every AOD value
(column by column, top to bottom), an M-H update of every mixing vector, a
draw of every channel variance, a draw of the GMRF precision and an M-H
update of every Dirichlet parameter.

Random numbers come from a :class:`numpy.random.Generator` seeded with
``numpy.random.SeedSequence(config.seed)``.  Multiple chains use the children
``SeedSequence(config.seed).spawn(n_chains)``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from concurrent.futures import ThreadPoolExecutor

import numpy as np
from scipy.special import gammaln

from . import _kernels
from .exceptions import ConfigurationError, DomainError
from .forward import ForwardModel
from .lattice import Adjacency, build_adjacency
from .model import (
    AerosolState,
    HyperState,
    RadianceBlock,
    log_posterior,
    log_sigma2_conditional,
    sigma_init,
)

__all__ = [
    "ChainConfig",
    "ChainState",
    "ChainRecord",
    "default_init",
    "propose_tau",
    "mh_update_tau",
    "mh_update_theta",
    "gibbs_update_kappa",
    "draw_kappa",
    "gibbs_update_sigma2",
    "mh_update_alpha",
    "run_chain",
    "run_chains",
]

logger = logging.getLogger(__name__)

KERNELS = ("tau", "theta", "alpha")


@dataclass(frozen=True)
class ChainConfig:
    """Run length, adaptation and fixed hyperprior settings of a chain.

    ``kappa_prior`` holds the (shape, rate) of the Gamma hyperprior and
    ``sigma2_prior`` the (degrees of freedom, scale) of the scaled
    inverse-chi-square hyperprior; the zero defaults give the improper
    ``1/kappa`` and ``1/sigma^2`` priors.  ``fix_hyper`` holds kappa, alpha
    and sigma^2 at their initial values (a conditional run on (tau, theta)).
    """

    iterations: int = 3000
    burn_in: int = 1000
    thinning: int = 1
    seed: int = 0
    adapt_acceptance: bool = True
    target_band: tuple[float, float] = (0.25, 0.50)
    alpha_step: float = 0.2
    adapt_interval: int = 10
    sigma2_method: str = "gibbs"
    sigma2_floor: float = 1e-12
    kappa_prior: tuple[float, float] = (0.0, 0.0)
    sigma2_prior: tuple[float, float] = (0.0, 0.0)
    kappa_init: float = 100.0
    fix_hyper: bool = False

    def __post_init__(self):
        if self.iterations < 0 or self.burn_in < 0:
            raise ConfigurationError("iterations and burn_in must be non-negative")
        if not (self.burn_in < self.iterations or self.iterations == self.burn_in == 0):
            raise ConfigurationError(
                f"burn_in < iterations violated (burn_in={self.burn_in}, iterations={self.iterations})"
            )
        if self.thinning < 1:
            raise ConfigurationError("thinning must be >= 1")
        lo, hi = self.target_band
        if not (0 < lo < hi < 1):
            raise ConfigurationError(f"target_band must lie within (0, 1), got {self.target_band}")
        if not self.alpha_step > 0:
            raise ConfigurationError("alpha_step must be positive")
        if self.adapt_interval < 1:
            raise ConfigurationError("adapt_interval must be >= 1")
        if self.sigma2_method not in ("gibbs", "mh"):
            raise ConfigurationError("sigma2_method must be 'gibbs' or 'mh'")
        if not self.kappa_init > 0:
            raise ConfigurationError("kappa_init must be positive")

    @property
    def n_samples(self) -> int:
        return (self.iterations - self.burn_in) // self.thinning


@dataclass
class ChainState:
    """Mutable state of one chain, including its cached forward radiances."""

    state: AerosolState
    hyper: HyperState
    lrt: np.ndarray
    adj: Adjacency
    rng: np.random.Generator
    support: tuple[float, float]
    iteration: int = 0
    accepted: dict = field(default_factory=lambda: dict.fromkeys(KERNELS, 0))
    attempted: dict = field(default_factory=lambda: dict.fromkeys(KERNELS, 0))
    tau_scale: float = 1.0
    alpha_step: np.ndarray | None = None


@dataclass
class ChainRecord:
    """Thinned post-burn-in samples and per-iteration traces of a run.

    ``log_posterior[0]`` is the value at the initial state and
    ``log_posterior[t]`` the value after iteration ``t``.  ``accept_log`` and
    ``attempt_log`` count accepted and attempted updates per iteration and
    kernel.
    """

    tau: np.ndarray
    theta: np.ndarray
    kappa: np.ndarray
    alpha: np.ndarray
    sigma2: np.ndarray
    sample_iterations: np.ndarray
    log_posterior: np.ndarray
    accept_log: dict
    attempt_log: dict
    burn_in: int
    final_state: AerosolState | None = None
    final_hyper: HyperState | None = None
    tau_scale: float = 1.0
    alpha_step: np.ndarray | None = None

    @property
    def n_samples(self) -> int:
        return self.tau.shape[0]

    def acceptance_counts(self, post_burn_in: bool = True) -> dict:
        start = self.burn_in if post_burn_in else 0
        return {k: (int(self.accept_log[k][start:].sum()), int(self.attempt_log[k][start:].sum()))
                for k in self.accept_log}


class _Problem:
    """Flat arrays shared by the kernels for one block or patch."""

    def __init__(self, lobs, adj: Adjacency, order, fm: ForwardModel):
        self.lobs = np.ascontiguousarray(lobs, dtype=float)
        self.adj = adj
        self.indptr = np.ascontiguousarray(adj.indptr, dtype=np.int64)
        self.indices = np.ascontiguousarray(adj.indices, dtype=np.int64)
        self.order = np.ascontiguousarray(order, dtype=np.int64)
        self.fm = fm
        self.fm_args = fm.kernel_args()
        self.support = fm.support
        self.n_pixels = self.lobs.shape[0]


def _check_compatible(block: RadianceBlock, fm: ForwardModel):
    if fm.n_channels != block.n_channels:
        raise ConfigurationError(
            f"forward model has {fm.n_channels} channels, block has {block.n_channels}"
        )
    if fm.n_components != block.n_components:
        raise ConfigurationError(
            f"forward model has {fm.n_components} components, block declares {block.n_components}"
        )


def default_init(block: RadianceBlock, fm: ForwardModel, kappa: float = 100.0,
                 tau0: float | None = None) -> tuple[AerosolState, HyperState]:
    """Midpoint AOD, uniform mixing, ``alpha = 1`` and operational sigma."""
    lo, hi = fm.support
    P, M = block.n_pixels, fm.n_components
    tau = np.full(P, 0.5 * (lo + hi) if tau0 is None else float(tau0))
    theta = np.full((P, M), 1.0 / M)
    hyper = HyperState(kappa, np.ones(M), sigma_init(block) ** 2)
    return AerosolState(tau, theta), hyper


# -- individual kernels ------------------------------------------------------

def propose_tau(p: int, tau, kappa: float, adj: Adjacency, rng: np.random.Generator,
                support=(0.0, 3.0), scale: float = 1.0) -> float:
    """Draw from the GMRF full conditional of pixel ``p``, truncated to ``support``.

    Mean is the neighbour average and variance ``scale^2 / (n_p kappa)``.  An
    isolated pixel gets a uniform draw on the support.
    """
    lo, hi = support
    nbrs = adj.neighbors(p)
    u = rng.random()
    if nbrs.size == 0:
        return lo + (hi - lo) * u
    tau = np.asarray(tau, dtype=float)
    mu = tau[nbrs].sum() / nbrs.size
    return _kernels.trunc_normal(mu, scale / np.sqrt(nbrs.size * kappa), lo, hi, u)


def _tau_step(prob: _Problem, st: ChainState, kappa, sigma2, scale, rng):
    P = prob.order.shape[0]
    u_prop = rng.random(P)
    u_acc = rng.random(P)
    flags = np.empty(P, dtype=np.bool_)
    lo, hi = prob.support
    n_acc = _kernels.tau_sweep(prob.order, prob.indptr, prob.indices, st.state.tau, st.state.theta,
                               prob.lobs, st.lrt, 0.5 / sigma2, float(kappa), lo, hi, float(scale),
                               u_prop, u_acc, *prob.fm_args, flags)
    return n_acc, flags


def _dirichlet(alpha, n, rng):
    draws = rng.dirichlet(alpha, n)
    # underflowed components would make log(theta) infinite downstream
    tiny = np.finfo(float).tiny
    if np.any(draws < tiny):
        draws = np.maximum(draws, tiny)
        draws /= draws.sum(axis=1, keepdims=True)
    return draws


def _theta_step(prob: _Problem, st: ChainState, alpha, sigma2, rng):
    P = prob.order.shape[0]
    proposals = _dirichlet(alpha, P, rng)
    u_acc = rng.random(P)
    flags = np.empty(P, dtype=np.bool_)
    n_acc = _kernels.theta_sweep(prob.order, st.state.tau, st.state.theta, prob.lobs, st.lrt,
                                 0.5 / sigma2, proposals, u_acc, *prob.fm_args, flags)
    return n_acc, flags


def mh_update_tau(p: int, chain: ChainState, block: RadianceBlock, fm: ForwardModel) -> bool:
    """Single-pixel M-H update of ``tau_p`` in place; returns the accept flag."""
    prob = _Problem(block.radiance, chain.adj, np.array([p]), fm)
    n_acc, _ = _tau_step(prob, chain, chain.hyper.kappa, chain.hyper.sigma2, chain.tau_scale, chain.rng)
    chain.accepted["tau"] += n_acc
    chain.attempted["tau"] += 1
    return bool(n_acc)


def mh_update_theta(p: int, chain: ChainState, block: RadianceBlock, fm: ForwardModel) -> bool:
    """Dirichlet(alpha) independence update of ``theta_p`` in place."""
    prob = _Problem(block.radiance, chain.adj, np.array([p]), fm)
    n_acc, _ = _theta_step(prob, chain, chain.hyper.alpha, chain.hyper.sigma2, chain.rng)
    chain.accepted["theta"] += n_acc
    chain.attempted["theta"] += 1
    return bool(n_acc)


def draw_kappa(t_kappa: float, n_pixels: int, rng: np.random.Generator, prior=(0.0, 0.0)) -> float:
    """Gamma((P-1)/2 + a0, rate = T/2 + b0) draw; depends on tau only through T."""
    shape = 0.5 * (n_pixels - 1) + prior[0]
    rate = 0.5 * t_kappa + prior[1]
    if not rate > 0:
        raise DomainError("kappa conditional is improper: the AOD field is constant")
    return float(rng.gamma(shape, 1.0 / rate))


def gibbs_update_kappa(tau, adj: Adjacency, rng: np.random.Generator, prior=(0.0, 0.0)) -> float:
    return draw_kappa(adj.edge_sum_sq(tau), np.asarray(tau).shape[0], rng, prior)


def gibbs_update_sigma2(ssr_c, n_pixels: int, rng: np.random.Generator, floor: float = 1e-12,
                        prior=(0.0, 0.0)):
    """Scaled inverse-chi-square draw ``(ssr + nu0 s0^2) / chi2(P + nu0)``.

    ``ssr_c`` may be a scalar or a vector of per-channel sums of squares.
    """
    ssr_c = np.asarray(ssr_c, dtype=float)
    nu0, s0 = prior
    draw = (ssr_c + nu0 * s0) / rng.chisquare(n_pixels + nu0, size=ssr_c.shape)
    draw = np.maximum(draw, floor)
    return float(draw) if draw.ndim == 0 else draw


def _sigma2_mh(sigma2, ssr, n_pixels, rng, floor, step=0.1):
    """Log-scale random-walk M-H on each channel variance."""
    prop = sigma2 * np.exp(step * rng.standard_normal(sigma2.shape))
    log_ratio = (log_sigma2_conditional(prop, ssr, n_pixels) - log_sigma2_conditional(sigma2, ssr, n_pixels)
                 + np.log(prop) - np.log(sigma2))
    accept = np.log(rng.random(sigma2.shape)) < log_ratio
    return np.maximum(np.where(accept, prop, sigma2), floor)


def _log_alpha_target(a_m, m, alpha, t_alpha_m, P):
    """Terms of log p(alpha | theta) that involve alpha_m."""
    total = alpha.sum() - alpha[m] + a_m
    return (a_m - 1.0) * t_alpha_m - P * (gammaln(a_m) - gammaln(total)) + (1.0 - a_m)


def _alpha_mh_step(alpha, m, t_alpha, n_pixels, step, rng) -> bool:
    z = rng.standard_normal()
    u = rng.random()
    a_old = alpha[m]
    a_new = a_old * np.exp(step * z)
    log_ratio = (_log_alpha_target(a_new, m, alpha, t_alpha[m], n_pixels)
                 - _log_alpha_target(a_old, m, alpha, t_alpha[m], n_pixels)
                 + np.log(a_new) - np.log(a_old))
    if np.isfinite(log_ratio) and np.log(u) < log_ratio:
        alpha[m] = a_new
        return True
    return False


def mh_update_alpha(m: int, chain: ChainState, theta_field, rng=None) -> bool:
    """Log-normal random-walk M-H update of ``alpha_m`` (with Jacobian term)."""
    rng = chain.rng if rng is None else rng
    theta_field = np.asarray(theta_field, dtype=float)
    t_alpha = np.log(theta_field).sum(axis=0)
    step = chain.alpha_step[m] if chain.alpha_step is not None else 0.2
    ok = _alpha_mh_step(chain.hyper.alpha, m, t_alpha, theta_field.shape[0], step, rng)
    chain.accepted["alpha"] += ok
    chain.attempted["alpha"] += 1
    return ok


# -- adaptation --------------------------------------------------------------

def _adapt_factor(rate, band):
    lo, hi = band
    if rate < lo:
        return 0.8
    if rate > hi:
        return 1.25
    return 1.0


def _adapt(st: ChainState, window: dict, band):
    """Retune proposal widths from one window of acceptance counts."""
    acc, att = window["tau"]
    if att:
        # a wider tau proposal lowers the acceptance rate
        st.tau_scale = float(np.clip(st.tau_scale * _adapt_factor(acc / att, band), 0.05, 20.0))
    acc, att = window["alpha"]
    for m in range(st.alpha_step.size):
        if att[m]:
            st.alpha_step[m] = float(np.clip(st.alpha_step[m] * _adapt_factor(acc[m] / att[m], band),
                                             1e-3, 5.0))


# -- full chain --------------------------------------------------------------

def _prepare(block, fm, config, init, adj):
    _check_compatible(block, fm)
    P = block.n_pixels
    if P <= 5 and not config.fix_hyper:
        raise ConfigurationError(f"the 1/kappa hyperprior needs more than 5 clear pixels, got {P}")
    adj = build_adjacency(block.grid) if adj is None else adj
    if init is None:
        init = default_init(block, fm, config.kappa_init)
    state, hyper = init[0].copy(), init[1].copy()
    if state.n_pixels != P or state.theta.shape[1] != fm.n_components:
        raise ConfigurationError("initial state does not match the block")
    if hyper.sigma2.size != block.n_channels or hyper.alpha.size != fm.n_components:
        raise ConfigurationError("initial hyperparameters do not match the block")
    state.validate(fm.support)
    order = block.grid.column_major_order()
    prob = _Problem(block.radiance, adj, order, fm)
    return prob, state, hyper


def _run(block, fm, config: ChainConfig, init, adj, seed_seq) -> ChainRecord:
    prob, state, hyper = _prepare(block, fm, config, init, adj)
    P, C, M = block.n_pixels, block.n_channels, fm.n_components
    rng = np.random.default_rng(seed_seq)
    st = ChainState(state, hyper, fm(state.tau, state.theta), prob.adj, rng, fm.support,
                    alpha_step=np.full(M, config.alpha_step))

    N, B = config.iterations, config.burn_in
    S = config.n_samples
    rec_tau = np.empty((S, P))
    rec_theta = np.empty((S, P, M))
    rec_kappa = np.empty(S)
    rec_alpha = np.empty((S, M))
    rec_sigma2 = np.empty((S, C))
    rec_iter = np.empty(S, dtype=np.int64)
    logp = np.empty(N + 1)
    acc_log = {"tau": np.zeros(N, np.int64), "theta": np.zeros(N, np.int64), "alpha": np.zeros(N, np.int64)}
    n_alpha_att = 0 if config.fix_hyper else M
    att_log = {"tau": np.full(N, P, np.int64), "theta": np.full(N, P, np.int64),
               "alpha": np.full(N, n_alpha_att, np.int64)}
    window = {"tau": [0, 0], "alpha": [np.zeros(M, np.int64), np.zeros(M, np.int64)]}
    logp[0] = log_posterior(block, st.state, st.hyper, fm, prob.adj, lrt=st.lrt)
    k = 0
    for t in range(N):
        h = st.hyper
        n_tau, _ = _tau_step(prob, st, h.kappa, h.sigma2, st.tau_scale, rng)
        n_theta, _ = _theta_step(prob, st, h.alpha, h.sigma2, rng)

        n_alpha = 0
        if not config.fix_hyper:
            ssr = ((prob.lobs - st.lrt) ** 2).sum(axis=0)
            if config.sigma2_method == "gibbs":
                h.sigma2 = gibbs_update_sigma2(ssr, P, rng, config.sigma2_floor, config.sigma2_prior)
            else:
                h.sigma2 = _sigma2_mh(h.sigma2, ssr, P, rng, config.sigma2_floor)
            h.kappa = draw_kappa(prob.adj.edge_sum_sq(st.state.tau), P, rng, config.kappa_prior)
            t_alpha = np.log(st.state.theta).sum(axis=0)
            for m in range(M):
                ok = _alpha_mh_step(h.alpha, m, t_alpha, P, st.alpha_step[m], rng)
                n_alpha += ok
                window["alpha"][0][m] += ok
                window["alpha"][1][m] += 1

        acc_log["tau"][t] = n_tau
        acc_log["theta"][t] = n_theta
        acc_log["alpha"][t] = n_alpha
        for name, n_acc, n_att in (("tau", n_tau, P), ("theta", n_theta, P), ("alpha", n_alpha, n_alpha_att)):
            st.accepted[name] += n_acc
            st.attempted[name] += n_att
        window["tau"][0] += n_tau
        window["tau"][1] += P
        st.iteration = t + 1
        logp[t + 1] = log_posterior(block, st.state, h, fm, prob.adj, lrt=st.lrt)

        if config.adapt_acceptance and t < B and (t + 1) % config.adapt_interval == 0:
            _adapt(st, window, config.target_band)
            window = {"tau": [0, 0], "alpha": [np.zeros(M, np.int64), np.zeros(M, np.int64)]}

        if t >= B and (t - B + 1) % config.thinning == 0:
            rec_tau[k] = st.state.tau
            rec_theta[k] = st.state.theta
            rec_kappa[k] = h.kappa
            rec_alpha[k] = h.alpha
            rec_sigma2[k] = h.sigma2
            rec_iter[k] = t + 1
            k += 1
        if (t + 1) % 500 == 0:
            logger.debug("iteration %d: log posterior %.3f, kappa %.2f", t + 1, logp[t + 1], h.kappa)

    return ChainRecord(rec_tau, rec_theta, rec_kappa, rec_alpha, rec_sigma2, rec_iter, logp,
                       acc_log, att_log, B, st.state.copy(), st.hyper.copy(),
                       st.tau_scale, st.alpha_step.copy())


def run_chain(block: RadianceBlock, fm: ForwardModel, config: ChainConfig | None = None,
              init: tuple[AerosolState, HyperState] | None = None,
              adj: Adjacency | None = None) -> ChainRecord:
    """Run one Metropolis-within-Gibbs chain on ``block``.

    Parameters
    ----------
    block : RadianceBlock
        Observed radiances of the clear pixels.
    fm : ForwardModel
        Forward model; its channel and component counts must match ``block``.
    config : ChainConfig, optional
    init : (AerosolState, HyperState), optional
        Starting point; defaults to :func:`default_init`.
    adj : Adjacency, optional
        Precomputed adjacency of ``block.grid``.

    Returns
    -------
    ChainRecord
    """
    config = ChainConfig() if config is None else config
    return _run(block, fm, config, init, adj, np.random.SeedSequence(config.seed))


def overdispersed_inits(block, fm, n_chains, kappa=100.0):
    """Initial states with constant AOD spread over the support quartiles."""
    lo, hi = fm.support
    if n_chains == 1:
        levels = [0.5 * (lo + hi)]
    else:
        levels = lo + (hi - lo) * (0.25 + 0.5 * np.arange(n_chains) / (n_chains - 1))
    return [default_init(block, fm, kappa, tau0=v) for v in levels]


def run_chains(block: RadianceBlock, fm: ForwardModel, config: ChainConfig | None = None,
               n_chains: int = 4, inits=None, workers: int = 1) -> list[ChainRecord]:
    """Independent chains on spawned seed streams, for convergence checks."""
    config = ChainConfig() if config is None else config
    if n_chains < 1:
        raise ConfigurationError("n_chains must be >= 1")
    inits = overdispersed_inits(block, fm, n_chains, config.kappa_init) if inits is None else list(inits)
    if len(inits) != n_chains:
        raise ConfigurationError("need one initial state per chain")
    adj = build_adjacency(block.grid)
    seeds = np.random.SeedSequence(config.seed).spawn(n_chains)
    jobs = [(block, fm, config, inits[i], adj, seeds[i]) for i in range(n_chains)]
    if workers <= 1:
        return [_run(*job) for job in jobs]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda job: _run(*job), jobs))
