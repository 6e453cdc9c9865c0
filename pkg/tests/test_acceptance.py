"""Acceptance criteria, each checked at its stated tolerance.

Every test prints exactly one ``criterion N: PASS|FAIL - ...`` line (visible
in ``pytest -v`` output) before asserting.  Run standalone with::

    python3 tests/test_acceptance.py

Expected runtime is several minutes on one core.
"""

from __future__ import annotations

import math
import os
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest
from scipy import stats

from bayesaod import (
    AerosolState,
    BlockGrid,
    ChainConfig,
    HyperState,
    RadianceBlock,
    RoundConfig,
    SimConfig,
    SurrogateModel,
    SurrogateParams,
    build_adjacency,
    build_patch_layout,
    run_chain,
    run_parallel,
    simulate_block,
)
from bayesaod.diagnostics import acceptance_report
from bayesaod.oracles import QuadratureSpec, gof_test, posterior_by_quadrature, surrogate_radiance
from bayesaod.sampler import default_init, gibbs_update_kappa, gibbs_update_sigma2, propose_tau

pytestmark = [pytest.mark.acceptance, pytest.mark.slow]

ROOT = Path(__file__).resolve().parents[1]
SEEDS = range(5)
STUDY = dict(rows=32, cols=32, alpha=(0.8, 0.4, 0.2, 0.2), noise_fraction=0.10)
CHAIN = dict(iterations=3000, burn_in=1000)
FM = SurrogateModel()


def report(pytestconfig, n, ok, detail):
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'} - {detail}"
    capman = pytestconfig.pluginmanager.getplugin("capturemanager")
    with capman.global_and_fixture_disabled():
        print("\n" + line, flush=True)
    assert ok, line


# -- shared runs ---------------------------------------------------------------

@pytest.fixture(scope="module")
def study_runs():
    """Global chains on the simulation-study block, keyed by (kappa_true, seed)."""
    out = {}
    for kappa in (100.0, 500.0):
        for seed in SEEDS:
            block, truth = simulate_block(SimConfig(kappa=kappa, seed=seed, **STUDY), FM)
            rec = run_chain(block, FM, ChainConfig(seed=seed, **CHAIN))
            out[kappa, seed] = (block, truth, rec)
    return out


@pytest.fixture(scope="module")
def threads():
    try:
        return len(os.sched_getaffinity(0))
    except AttributeError:  # pragma: no cover - non-Linux
        return os.cpu_count() or 1


@pytest.fixture(scope="module")
def full_block_runs(threads):
    """Global and patch-parallel runs on a 32 x 128 block, with wall times."""
    block, truth = simulate_block(SimConfig(rows=32, cols=128, seed=0), FM)
    cfg = ChainConfig(seed=0, **CHAIN)
    workers = min(8, threads)
    layout = build_patch_layout(block.grid, 2, 8)
    # compile and warm caches outside the timed region
    warm = ChainConfig(iterations=4, burn_in=2)
    run_chain(block, FM, warm)
    run_parallel(block, FM, layout, RoundConfig(iterations_per_round=2, workers=workers), warm)
    t = time.perf_counter()
    glob = run_chain(block, FM, cfg)
    t_glob = time.perf_counter() - t
    t = time.perf_counter()
    par = run_parallel(block, FM, layout, RoundConfig(workers=workers), cfg)
    t_par = time.perf_counter() - t
    return dict(block=block, layout=layout, glob=glob, par=par, t_glob=t_glob, t_par=t_par, workers=workers)


def _recovery(block, truth, rec):
    t_true = truth.state.tau
    t_hat = rec.tau.mean(axis=0)
    corr = float(np.corrcoef(t_true, t_hat)[0, 1])
    cv = float(np.sqrt(np.mean((t_hat - t_true) ** 2)) / np.mean(t_true))
    return corr, cv


# -- criteria ----------------------------------------------------------------

def test_criterion_01_correlation(pytestconfig, study_runs):
    corrs = [_recovery(*study_runs[100.0, s])[0] for s in SEEDS]
    ok = min(corrs) >= 0.75
    report(pytestconfig, 1, ok, "corr(true tau, posterior mean) per seed "
           + ", ".join(f"{c:.3f}" for c in corrs) + " (need >= 0.75 each)")


def test_criterion_02_cv_rmse(pytestconfig, study_runs):
    cvs = [_recovery(*study_runs[100.0, s])[1] for s in SEEDS]
    ok = max(cvs) <= 0.12
    report(pytestconfig, 2, ok, "CV-RMSE per seed " + ", ".join(f"{100 * c:.2f}%" for c in cvs)
           + " (need <= 12% each)")


def test_criterion_03_kappa_recovery(pytestconfig, study_runs):
    parts, ok = [], True
    for kappa in (100.0, 500.0):
        means = [float(study_runs[kappa, s][2].kappa.mean()) for s in SEEDS]
        avg = float(np.mean(means))
        rel = avg / kappa - 1
        ok &= abs(rel) <= 0.15
        parts.append(f"kappa_true {kappa:g}: mean over seeds {avg:.1f} ({100 * rel:+.1f}%)")
    report(pytestconfig, 3, ok, "; ".join(parts) + " (need within +-15%)")


def test_criterion_04_convergence_horizon(pytestconfig):
    block, _ = simulate_block(SimConfig(kappa=100.0, seed=0, **STUDY), FM)
    lo, hi = FM.support
    parts, ok = [], True
    for q in (0.25, 0.75):
        tau0 = lo + q * (hi - lo)
        rec = run_chain(block, FM, ChainConfig(seed=0, **CHAIN), init=default_init(block, FM, tau0=tau0))
        post = rec.log_posterior[rec.burn_in + 1:]
        z = (rec.log_posterior[400] - post.mean()) / post.std()
        ok &= abs(z) <= 3
        parts.append(f"init tau={tau0:g}: z={z:+.2f}")
    report(pytestconfig, 4, ok, "log posterior at iteration 400 vs post-burn-in mean/SD: "
           + ", ".join(parts) + " (need |z| <= 3)")


def test_criterion_05_acceptance_rates(pytestconfig, study_runs):
    parts, ok = [], True
    for s in SEEDS:
        rep = acceptance_report(study_runs[100.0, s][2])
        rates = {k: rep[k]["rate"] for k in ("tau", "theta")}
        ok &= all(0.25 <= r <= 0.50 for r in rates.values())
        parts.append(f"seed {s}: tau {rates['tau']:.3f} theta {rates['theta']:.3f}")
    report(pytestconfig, 5, ok, "post-burn-in acceptance " + "; ".join(parts) + " (need in [0.25, 0.50])")


def test_criterion_06_parallel_consistency(pytestconfig, full_block_runs):
    r = full_block_runs
    d = np.abs(r["glob"].tau.mean(axis=0) - r["par"].tau.mean(axis=0))
    agree = float(np.mean(d <= 0.05))
    dis = d > 0.05
    edge = r["layout"].edge_distance().ravel()[r["block"].grid.clear_cells]
    near = float(np.mean(edge[dis] <= 2)) if dis.any() else 1.0  # no disagreements: clause holds vacuously
    ok = agree >= 0.95 and near >= 0.60
    report(pytestconfig, 6, ok,
           f"agreement {100 * agree:.2f}% (need >= 95%); {int(dis.sum())} disagreeing pixels, "
           f"{100 * near:.1f}% within 2 px of a patch edge (need >= 60%); "
           f"kappa global {r['glob'].kappa.mean():.1f} vs parallel {r['par'].kappa.mean():.1f}; "
           f"max |diff| {d.max():.4f}")


def test_criterion_07_parallel_speedup(pytestconfig, full_block_runs, threads):
    r = full_block_runs
    ratio = r["t_par"] / r["t_glob"]
    if threads >= 8:
        bound, mode = 0.2, "8 workers"
    else:
        bound, mode = 1.0 / r["workers"] + 0.1, f"degraded: {threads} hardware thread(s), {r['workers']} worker(s)"
    ok = ratio <= bound
    report(pytestconfig, 7, ok, f"wall time parallel {r['t_par']:.1f}s / global {r['t_glob']:.1f}s = {ratio:.3f} "
           f"(need <= {bound:.3f}, {mode})")


TOY = dict(E=[[0.8, 0.3], [0.6, 0.2]], P=[[0.12, 0.05], [0.10, 0.06]], S=[0.03, 0.05])


def test_criterion_08_quadrature_oracle(pytestconfig):
    fm = SurrogateModel(SurrogateParams(np.array(TOY["E"]), np.array(TOY["P"]), np.array(TOY["S"])))
    grid = BlockGrid(2, 2)
    kappa, alpha = 5.0, (2.0, 1.0)
    block0, truth = simulate_block(SimConfig(rows=2, cols=2, kappa=kappa, alpha=alpha, seed=5), fm)
    sigma2 = tuple(float(s) ** 2 for s in truth.sigma)
    block = RadianceBlock(grid, block0.radiance, 2)
    init = (AerosolState(np.full(4, 1.5), np.full((4, 2), 0.5)), HyperState(kappa, alpha, sigma2))
    rec = run_chain(block, fm, ChainConfig(iterations=200_000, burn_in=2000, seed=3, fix_hyper=True), init)
    forward = lambda t, th: surrogate_radiance(TOY["E"], TOY["P"], TOY["S"], t, th)  # noqa: E731
    quad = posterior_by_quadrature(block.radiance, forward, (2, 2),
                                   QuadratureSpec(kappa, sigma2, n_tau=50, n_theta=200, alpha=alpha))
    mean_err = np.abs(rec.tau.mean(axis=0) / quad.mean - 1)
    sd_err = np.abs(rec.tau.std(axis=0) / quad.sd - 1)
    ok = mean_err.max() <= 0.02 and sd_err.max() <= 0.05
    report(pytestconfig, 8, ok, f"max relative error mean {100 * mean_err.max():.2f}% (need <= 2%), "
           f"SD {100 * sd_err.max():.2f}% (need <= 5%) over 4 pixels")


def test_criterion_09_conditional_laws(pytestconfig):
    rng = np.random.default_rng(2024)
    n = 10_000
    # kappa | tau ~ Gamma((P-1)/2, rate T/2)
    grid = BlockGrid(5, 6)
    adj = build_adjacency(grid)
    tau = rng.uniform(0.5, 1.5, grid.n_clear)
    P = tau.size
    T = float(sum((tau[a] - tau[b]) ** 2 for a, b in adj.edges))
    k_draws = np.array([gibbs_update_kappa(tau, adj, rng) for _ in range(n)])
    p_kappa = gof_test(k_draws, lambda v: stats.gamma.logpdf(v, (P - 1) / 2, scale=2 / T), support=(0, np.inf))
    # sigma_c^2 | rest ~ scaled inverse chi-square(P, ssr/P) = InvGamma(P/2, scale ssr/2)
    ssr = 0.37
    s_draws = gibbs_update_sigma2(np.full(n, ssr), P, rng)
    p_sigma = gof_test(s_draws, lambda v: stats.invgamma.logpdf(v, P / 2, scale=ssr / 2), support=(0, np.inf))
    # tau proposal: truncated normal with neighbour-mean centre and variance 1/(n_p kappa)
    line = build_adjacency(BlockGrid(1, 3))
    z_worst, cases = 0.0, [((0.2, 0.4), 100.0), ((2.9, 3.0), 5.0)]
    m = 100_000
    for (a, b), kap in cases:
        draws = np.array([propose_tau(1, [a, 0.0, b], kap, line, rng) for _ in range(m)])
        mu, sd = (a + b) / 2, 1 / math.sqrt(2 * kap)
        lo, hi = (0 - mu) / sd, (3 - mu) / sd
        mean, var, _, kurt = (float(x) for x in stats.truncnorm.stats(lo, hi, loc=mu, scale=sd, moments="mvsk"))
        z_mean = (draws.mean() - mean) / math.sqrt(var / m)
        z_var = (draws.var(ddof=1) - var) / (var * math.sqrt((kurt + 2) / m))
        z_worst = max(z_worst, abs(z_mean), abs(z_var))
    ok = p_kappa >= 0.01 and p_sigma >= 0.01 and z_worst <= 3
    report(pytestconfig, 9, ok, f"gof p-values kappa {p_kappa:.3f}, sigma2 {p_sigma:.3f} (need >= 0.01); "
           f"tau proposal moments worst |z| {z_worst:.2f} (need <= 3)")


def _pytest(*targets):
    res = subprocess.run([sys.executable, "-m", "pytest", "-q", "-p", "no:cacheprovider", *targets],
                         cwd=ROOT, capture_output=True, text=True)
    last = res.stdout.strip().splitlines()[-1] if res.stdout.strip() else res.stderr.strip()[-200:]
    return res.returncode == 0, last


def test_criterion_10_property_suite(pytestconfig):
    ok, last = _pytest(
        "tests/test_properties.py",
        "tests/test_model.py::test_gmrf_shift_invariance_and_oracle",
        "tests/test_model.py::test_log_likelihood_matches_brute_force",
        "tests/test_formats.py",
        "tests/test_forward.py::test_table_file_round_trip_is_byte_exact",
        "tests/test_validation.py::test_station_file_round_trip_and_errors",
        "tests/test_cli.py::test_simulate_is_deterministic",
        "tests/test_cli.py::test_retrieve_outputs_and_determinism",
    )
    report(pytestconfig, 10, ok, "shift invariance, likelihood additivity, simplex invariants, "
           f"byte round-trips, CLI determinism: {last}")


def test_criterion_11_excluded_items(pytestconfig):
    ok, last = _pytest("tests/test_validation.py", "tests/test_oracles.py")
    report(pytestconfig, 11, ok, "EXCLUDED by definition: figure RMS values, ground-station comparisons and "
           "case studies need proprietary radiances; validation operations verified by oracle "
           f"recomputation on synthetic fields and station records: {last}")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v", "-p", "no:cacheprovider"]))
