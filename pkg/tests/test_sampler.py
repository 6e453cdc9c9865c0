import math

import numpy as np
import pytest
from scipy import integrate

from bayesaod import (
    AerosolState,
    BlockGrid,
    ChainConfig,
    ChainState,
    ConfigurationError,
    DomainError,
    HyperState,
    RadianceBlock,
    SurrogateModel,
    SurrogateParams,
    build_adjacency,
    run_chain,
    run_chains,
)
from bayesaod import _kernels
from bayesaod.sampler import (
    _dirichlet,
    default_init,
    draw_kappa,
    gibbs_update_kappa,
    gibbs_update_sigma2,
    mh_update_alpha,
    mh_update_tau,
    mh_update_theta,
    overdispersed_inits,
    propose_tau,
)


def _chain_state(block, fm, state, hyper, seed=0):
    adj = build_adjacency(block.grid)
    return ChainState(state.copy(), hyper.copy(), fm(state.tau, state.theta), adj,
                      np.random.default_rng(seed), fm.support, alpha_step=np.full(fm.n_components, 0.2))


# -- tau proposal -------------------------------------------------------------

def _line_adjacency():
    return build_adjacency(BlockGrid(1, 3))  # pixel 1 has neighbours 0 and 2


def test_proposal_degenerate_limit(rng):
    adj = _line_adjacency()
    draws = [propose_tau(1, [0.5, 9.9, 0.5], 1e12, adj, rng) for _ in range(100)]
    assert np.allclose(draws, 0.5, atol=1e-5)


def test_proposal_mean_matches_closed_form(rng):
    adj = _line_adjacency()
    tau = [0.2, 0.0, 0.4]
    n = 100_000
    draws = np.array([propose_tau(1, tau, 100.0, adj, rng, support=(-10, 10)) for _ in range(n)])
    se = math.sqrt(1 / 200) / math.sqrt(n)
    assert abs(draws.mean() - 0.3) < 3 * se
    assert np.all((draws >= -10) & (draws <= 10))


def test_proposal_respects_support(rng):
    adj = _line_adjacency()
    draws = [propose_tau(1, [2.9, 0.0, 3.0], 1.0, adj, rng) for _ in range(2000)]
    assert min(draws) >= 0.0 and max(draws) <= 3.0


def test_isolated_pixel_gets_uniform_proposal(rng):
    adj = build_adjacency(BlockGrid(1, 1))
    draws = np.array([propose_tau(0, [1.0], 5.0, adj, rng) for _ in range(4000)])
    assert 0 <= draws.min() and draws.max() <= 3 and abs(draws.mean() - 1.5) < 0.05


# -- tau / theta accept rules -----------------------------------------------

def _one_channel_model():
    # equal extinction makes radiance linear in theta at fixed tau
    return SurrogateModel(SurrogateParams(np.array([[1.0, 1.0]]), np.array([[0.10, 0.20]]), np.array([0.02])))


def _theta_sweep(fm, lobs, tau, theta, sigma2, proposal, u):
    order = np.array([0])
    theta = np.array([theta], float)
    lrt = fm(np.array([tau]), theta)
    flags = np.empty(1, np.bool_)
    n = _kernels.theta_sweep(order, np.array([tau]), theta, np.array([lobs]), lrt,
                             0.5 / np.asarray(sigma2), np.array([proposal], float), np.array([u]),
                             *fm.kernel_args(), flags)
    return n


def test_theta_identical_fit_always_accepted():
    fm = _one_channel_model()
    lobs = fm.evaluate(1.0, [0.5, 0.5])
    # swapping to a vector with the same mean path radiance leaves the fit unchanged
    assert _theta_sweep(fm, lobs, 1.0, [0.5, 0.5], [1e-4], [0.5, 0.5], 0.999999) == 1


def test_chi_square_increase_of_log_two_gives_half_acceptance():
    fm = _one_channel_model()
    sigma = 0.001
    lobs = fm.evaluate(1.0, [1.0, 0.0])
    # find the proposal whose residual raises chi2 by exactly ln 2
    slope = (fm.evaluate(1.0, [0.0, 1.0]) - lobs)[0]
    w = sigma * math.sqrt(2 * math.log(2)) / slope
    prop = [1.0 - w, w]
    resid = (lobs - fm.evaluate(1.0, prop))[0]
    assert resid**2 / (2 * sigma**2) == pytest.approx(math.log(2), rel=1e-9)
    us = np.linspace(0.0005, 0.9995, 1000)
    acc = sum(_theta_sweep(fm, lobs, 1.0, [1.0, 0.0], [sigma**2], prop, u) for u in us)
    assert acc / us.size == pytest.approx(0.5, abs=1e-3)


def test_tau_kernel_log_two_rule():
    """Same rule for tau: the proposal is the conditional, so only the fit ratio remains."""
    fm = _one_channel_model()
    sigma = 0.001
    theta = np.array([[1.0, 0.0], [1.0, 0.0]])
    # neighbour pinned at 1.2 with kappa huge makes the proposal deterministic
    tau = np.array([1.0, 1.2])
    lobs = fm(tau, theta).copy()
    d = (fm.evaluate(1.2, [1.0, 0.0]) - lobs[0])[0]
    sigma = abs(d) / math.sqrt(2 * math.log(2))
    adj = build_adjacency(BlockGrid(1, 2))
    acc = 0
    us = np.linspace(0.0005, 0.9995, 1000)
    for u in us:
        t = tau.copy()
        lrt = fm(t, theta)
        flags = np.empty(1, np.bool_)
        acc += _kernels.tau_sweep(np.array([0]), adj.indptr, adj.indices, t, theta, lobs, lrt,
                                  np.array([0.5 / sigma**2]), 1e16, 0.0, 3.0, 1.0,
                                  np.array([0.5]), np.array([u]), *fm.kernel_args(), flags)
    assert acc / us.size == pytest.approx(0.5, abs=2e-3)


def test_theta_posterior_concentrates_on_fitting_component():
    fm = _one_channel_model()
    sigma = 0.002
    lobs = fm.evaluate(1.0, [1.0, 0.0])
    shift = (fm.evaluate(1.0, [0.0, 1.0]) - lobs)[0]
    # make component 2 off by 5 sigma
    sigma = abs(shift) / 5.0
    grid = BlockGrid(1, 1)
    block = RadianceBlock(grid, lobs[None, :], 2)
    state = AerosolState([1.0], [[0.5, 0.5]])
    hyper = HyperState(1.0, [1.0, 1.0], [sigma**2])
    chain = _chain_state(block, fm, state, hyper, seed=4)
    draws = []
    for _ in range(40_000):
        mh_update_theta(0, chain, block, fm)
        draws.append(chain.state.theta[0, 0])
    dens = lambda t: math.exp(-12.5 * (1 - t) ** 2)  # noqa: E731
    oracle = integrate.quad(lambda t: t * dens(t), 0, 1)[0] / integrate.quad(dens, 0, 1)[0]
    assert np.mean(draws) > 0.8
    assert np.mean(draws) == pytest.approx(oracle, abs=0.01)
    assert chain.attempted["theta"] == 40_000


def test_mh_update_tau_keeps_cache_consistent(small_sim, surrogate):
    block, truth = small_sim
    state, hyper = default_init(block, surrogate)
    chain = _chain_state(block, surrogate, state, hyper)
    for p in range(block.n_pixels):
        mh_update_tau(p, chain, block, surrogate)
    assert np.allclose(chain.lrt, surrogate(chain.state.tau, chain.state.theta), rtol=0, atol=0)
    assert chain.attempted["tau"] == block.n_pixels


def test_uniform_dirichlet_proposals(rng):
    n = 100_000
    d = _dirichlet(np.ones(4), n, rng)
    se = math.sqrt(3 / 80) / math.sqrt(n)
    assert np.all(np.abs(d.mean(axis=0) - 0.25) < 3 * se)
    assert np.allclose(d.sum(axis=1), 1.0, atol=1e-12)


# -- hyperparameter conditionals ---------------------------------------------

def test_kappa_draw_mean(rng):
    adj = build_adjacency(BlockGrid(4, 4))
    tau = rng.uniform(0, 1, 16)
    T = adj.edge_sum_sq(tau)
    n = 100_000
    draws = np.array([gibbs_update_kappa(tau, adj, rng) for _ in range(n)])
    shape, rate = 7.5, T / 2
    assert abs(draws.mean() - 15 / T) < 3 * math.sqrt(shape) / rate / math.sqrt(n)


def test_kappa_draws_scale_with_field(rng):
    adj = build_adjacency(BlockGrid(4, 4))
    tau = rng.uniform(0, 1, 16)
    n = 50_000
    a = np.array([gibbs_update_kappa(tau, adj, rng) for _ in range(n)])
    b = np.array([gibbs_update_kappa(2 * tau, adj, rng) for _ in range(n)])
    ratio = b.mean() / a.mean()
    assert ratio == pytest.approx(0.25, rel=0.02)


def test_kappa_single_edge_is_chi_square_one(rng):
    adj = build_adjacency(BlockGrid(1, 2))
    draws = np.array([gibbs_update_kappa([0.0, 1.0], adj, rng) for _ in range(50_000)])
    # shape 1/2, rate 1/2: a chi-square with one degree of freedom
    assert draws.mean() == pytest.approx(1.0, abs=3 * math.sqrt(2 / 50_000))
    assert draws.var() == pytest.approx(2.0, rel=0.08)


def test_kappa_constant_field_is_improper(rng):
    with pytest.raises(DomainError):
        draw_kappa(0.0, 10, rng)


def test_sigma2_draw_mean(rng):
    P, ssr, n = 20, 3.0, 100_000
    draws = gibbs_update_sigma2(np.full(n, ssr), P, rng)
    mean = ssr / (P - 2)
    sd = mean * math.sqrt(2 / (P - 4))
    assert abs(draws.mean() - mean) < 3 * sd / math.sqrt(n)


def test_sigma2_draws_concentrate_for_large_p(rng):
    v, P = 0.3, 10**7
    draws = gibbs_update_sigma2(np.full(1000, v * P), P, rng)
    assert np.allclose(draws, v, rtol=2e-3)


def test_sigma2_floor(rng):
    assert gibbs_update_sigma2(0.0, 10, rng, floor=1e-9) == 1e-9


def test_alpha_identical_proposal_accepted(small_sim, surrogate):
    block, _ = small_sim
    state, hyper = default_init(block, surrogate)
    chain = _chain_state(block, surrogate, state, hyper)
    chain.alpha_step[:] = 1e-300  # proposal equals current value
    assert mh_update_alpha(0, chain, state.theta)


def test_alpha_recovery_from_known_generator():
    rng = np.random.default_rng(7)
    truth = np.array([0.8, 0.4, 0.2, 0.2])
    theta = rng.dirichlet(truth, 1024)
    grid = BlockGrid(32, 32)
    fm = SurrogateModel()
    block = RadianceBlock(grid, fm(np.full(1024, 1.0), theta), 4)
    state = AerosolState(np.full(1024, 1.0), theta)
    chain = _chain_state(block, fm, state, HyperState(100.0, np.ones(4), np.ones(36)), seed=8)
    keep = []
    for it in range(6000):
        for m in range(4):
            mh_update_alpha(m, chain, theta)
        if it >= 1000:
            keep.append(chain.hyper.alpha.copy())
    post = np.mean(keep, axis=0)
    assert np.all(np.abs(post / truth - 1) < 0.15)
    rate = chain.accepted["alpha"] / chain.attempted["alpha"]
    assert 0.1 < rate < 0.9


# -- full chains --------------------------------------------------------------

def test_zero_iterations(small_sim, surrogate):
    block, _ = small_sim
    rec = run_chain(block, surrogate, ChainConfig(iterations=0, burn_in=0))
    assert rec.n_samples == 0 and rec.tau.shape == (0, block.n_pixels)
    assert rec.log_posterior.shape == (1,)


def test_fixed_seed_is_bitwise_reproducible(small_sim, surrogate):
    block, _ = small_sim
    cfg = ChainConfig(iterations=60, burn_in=20, seed=3)
    a, b = run_chain(block, surrogate, cfg), run_chain(block, surrogate, cfg)
    for name in ("tau", "theta", "kappa", "alpha", "sigma2", "log_posterior"):
        assert np.array_equal(getattr(a, name), getattr(b, name))
    c = run_chain(block, surrogate, ChainConfig(iterations=60, burn_in=20, seed=4))
    assert not np.array_equal(a.tau, c.tau)


def test_record_bookkeeping(small_sim, surrogate):
    block, _ = small_sim
    cfg = ChainConfig(iterations=50, burn_in=10, thinning=4)
    rec = run_chain(block, surrogate, cfg)
    assert rec.n_samples == cfg.n_samples == 10
    assert rec.sample_iterations.tolist() == list(range(14, 51, 4))
    assert np.all(rec.attempt_log["tau"] == block.n_pixels)
    acc, att = rec.acceptance_counts()["tau"]
    assert att == 40 * block.n_pixels and 0 <= acc <= att
    assert np.allclose(rec.theta.sum(axis=2), 1.0, atol=1e-10)
    assert rec.tau.min() >= 0 and rec.tau.max() <= 3


def test_two_pixel_block_with_stiff_prior_is_correlated(toy_model):
    grid = BlockGrid(1, 2)
    lobs = toy_model(np.array([1.0, 1.0]), np.full((2, 2), 0.5))
    block = RadianceBlock(grid, lobs, 2)
    init = (AerosolState([1.0, 1.0], np.full((2, 2), 0.5)), HyperState(1e4, [1.0, 1.0], [1.0, 1.0]))
    rec = run_chain(block, toy_model, ChainConfig(iterations=6000, burn_in=1000, fix_hyper=True,
                                                  adapt_acceptance=False, seed=2), init)
    assert np.corrcoef(rec.tau.T)[0, 1] > 0.9
    assert np.all(rec.kappa == 1e4)


def test_config_validation(small_sim, surrogate):
    with pytest.raises(ConfigurationError, match="burn_in < iterations"):
        ChainConfig(iterations=0, burn_in=10)
    with pytest.raises(ConfigurationError):
        ChainConfig(thinning=0)
    block = RadianceBlock(BlockGrid(1, 2), [[0.1] * 36, [0.1] * 36], 4)
    with pytest.raises(ConfigurationError, match="more than 5"):
        run_chain(block, surrogate, ChainConfig(iterations=10, burn_in=5))


def test_run_chains_overdispersed_and_threaded(small_sim, surrogate):
    block, _ = small_sim
    inits = overdispersed_inits(block, surrogate, 3)
    assert [float(i[0].tau[0]) for i in inits] == [0.75, 1.5, 2.25]
    cfg = ChainConfig(iterations=30, burn_in=10, seed=9)
    serial = run_chains(block, surrogate, cfg, n_chains=3)
    threaded = run_chains(block, surrogate, cfg, n_chains=3, workers=3)
    for a, b in zip(serial, threaded):
        assert np.array_equal(a.tau, b.tau)
    assert not np.array_equal(serial[0].tau, serial[1].tau)


def test_adaptation_stays_within_burn_in(small_sim, surrogate):
    block, _ = small_sim
    rec = run_chain(block, surrogate, ChainConfig(iterations=200, burn_in=100, seed=1))
    rec2 = run_chain(block, surrogate, ChainConfig(iterations=400, burn_in=100, seed=1))
    # widths frozen after burn-in: identical regardless of run length
    assert rec.tau_scale == rec2.tau_scale
    assert np.array_equal(rec.alpha_step, rec2.alpha_step)
