import math

import numpy as np
import pytest

from bayesaod import ChainConfig, ConfigurationError, FormatError, run_chain, run_chains
from bayesaod.diagnostics import (
    DiagnosticsReport,
    acceptance_report,
    autocorrelation,
    compute_rhat,
    diagnose,
    nearest_rank_percentiles,
    summarize,
)
from bayesaod.oracles import naive_acf, naive_moments, naive_nearest_rank, naive_rhat


def test_rhat_identical_chains():
    x = [0.3, 1.0, 2.0, 0.5]
    assert compute_rhat([x, x]) == pytest.approx(math.sqrt(3 / 4))


def test_rhat_constant_chains():
    assert compute_rhat([[1, 1, 1, 1], [1, 1, 1, 1]]) == 1.0
    assert compute_rhat([[1, 1, 1, 1], [2, 2, 2, 2]]) == math.inf


def test_rhat_hand_example():
    a, b = [0, 1, 0, 1], [10, 11, 10, 11]
    # W = 1/3, B/n = 50, n = 4
    hand = math.sqrt((0.75 / 3 + 50) / (1 / 3))
    assert compute_rhat([a, b]) == pytest.approx(hand, rel=1e-12)
    assert compute_rhat([a, b]) == pytest.approx(naive_rhat([a, b]), rel=1e-12)
    assert hand == pytest.approx(12.278, abs=5e-4)


def test_rhat_random_vs_oracle(rng):
    chains = rng.standard_normal((4, 50)) + np.arange(4)[:, None] * 0.1
    assert compute_rhat(chains) == pytest.approx(naive_rhat(chains.tolist()), rel=1e-12)


def test_rhat_input_checks():
    with pytest.raises(ConfigurationError):
        compute_rhat([[1.0, 2.0]])


def test_acceptance_report_rates():
    rep = acceptance_report({"tau": (1000, 1000), "theta": (300, 1000), "alpha": (0, 0)})
    assert rep["tau"]["rate"] == 1.0 and rep["tau"]["flagged"]
    assert rep["theta"]["rate"] == pytest.approx(0.30) and not rep["theta"]["flagged"]
    assert rep["alpha"]["rate"] is None
    with pytest.raises(ConfigurationError):
        acceptance_report({"tau": (5, 3)})


def test_acceptance_counts_equal_recount_from_log(small_sim, surrogate):
    block, _ = small_sim
    rec = run_chain(block, surrogate, ChainConfig(iterations=80, burn_in=30, seed=2))
    rep = acceptance_report(rec)
    for k in ("tau", "theta", "alpha"):
        recount = sum(int(v) for v in rec.accept_log[k][30:])
        attempts = sum(int(v) for v in rec.attempt_log[k][30:])
        assert rep[k]["accepted"] == recount and rep[k]["attempted"] == attempts


def test_acf_white_noise(rng):
    acf = autocorrelation(rng.standard_normal(10_000), 20)
    assert acf[0] == 1.0
    assert np.all(np.abs(acf[1:]) < 0.05)


def test_acf_ar1(rng):
    n, phi = 50_000, 0.8
    e = rng.standard_normal(n)
    x = np.empty(n)
    x[0] = e[0]
    for t in range(1, n):
        x[t] = phi * x[t - 1] + e[t]
    acf = autocorrelation(x, 5)
    assert np.allclose(acf, phi ** np.arange(6), atol=0.03)


def test_acf_matches_oracle_and_constant_series(rng):
    x = rng.standard_normal(200)
    assert np.allclose(autocorrelation(x, 7), naive_acf(x, 7), rtol=1e-12, atol=1e-14)
    c = autocorrelation(np.ones(10), 3)
    assert c[0] == 1.0 and np.all(np.isnan(c[1:]))


def test_nearest_rank():
    v = np.arange(1, 101, dtype=float)
    assert nearest_rank_percentiles(v, (5, 50, 95)).tolist() == [5.0, 50.0, 95.0]
    single = nearest_rank_percentiles([2.5])
    assert np.all(single == 2.5)


def test_nearest_rank_vs_oracle(rng):
    v = rng.standard_normal(37)
    for p in (0, 5, 25, 50, 75, 95, 100):
        assert nearest_rank_percentiles(v, (p,))[0] == naive_nearest_rank(v, p)


def test_summarize_single_sample_and_oracle(small_sim, surrogate):
    block, _ = small_sim
    rec = run_chain(block, surrogate, ChainConfig(iterations=2, burn_in=1))
    s = summarize(rec)
    assert s.n_samples == 1
    assert np.array_equal(s.tau_mean, rec.tau[0]) and np.all(s.tau_sd == 0)
    assert np.all(s.tau_pct == rec.tau[0])
    rec = run_chain(block, surrogate, ChainConfig(iterations=60, burn_in=20, seed=6))
    s = summarize(rec)
    m, sd = naive_moments(rec.tau)
    assert np.allclose(s.tau_mean, m, rtol=1e-12) and np.allclose(s.tau_sd, sd, rtol=1e-9, atol=1e-15)
    m, sd = naive_moments(rec.kappa)
    assert s.kappa_mean == pytest.approx(m, rel=1e-12)


def test_diagnose_and_text_round_trip(small_sim, surrogate):
    block, _ = small_sim
    recs = run_chains(block, surrogate, ChainConfig(iterations=60, burn_in=20, seed=1), n_chains=2)
    rep = diagnose(recs, max_lag=5)
    assert rep.n_chains == 2 and rep.n_samples == 80
    assert rep.rhat is not None and rep.rhat > 0
    assert rep.acf.shape == (6,)
    back = DiagnosticsReport.from_text(rep.to_text())
    assert back.to_text() == rep.to_text()
    single = diagnose(recs[0])
    assert single.rhat is None and single.converged is None
    assert "rhat = absent" in single.to_text()


def test_report_flags_and_infinite_rhat():
    rep = DiagnosticsReport(2, 10, math.inf, 1.1, {"tau": 0.3}, {"tau": False}, np.array([1.0, np.nan]))
    assert rep.converged is False
    back = DiagnosticsReport.from_text(rep.to_text())
    assert back.rhat == math.inf and np.isnan(back.acf[1])


def test_report_parse_error_has_line():
    with pytest.raises(FormatError) as err:
        DiagnosticsReport.from_text("n_chains = 2\nn_samples = x\n", path="d.txt")
    assert err.value.line == 2
