"""Convergence and mixing diagnostics for recorded chains.

R-hat is the classic (non-split) potential scale reduction.  Percentiles
use the nearest-rank rule so summaries are reproducible across numerical
libraries: the p-th percentile of ``n`` sorted samples is the sample of
rank ``ceil(p/100 * n)`` (rank 1 for ``p = 0``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .exceptions import ConfigurationError, FormatError

__all__ = [
    "PERCENTILES",
    "ACCEPTANCE_BAND",
    "RHAT_THRESHOLDS",
    "PosteriorSummary",
    "DiagnosticsReport",
    "compute_rhat",
    "acceptance_report",
    "autocorrelation",
    "nearest_rank_percentiles",
    "summarize",
    "diagnose",
]

PERCENTILES = (5, 25, 50, 75, 95)
ACCEPTANCE_BAND = (0.25, 0.50)
RHAT_THRESHOLDS = (1.1, 1.2)


def compute_rhat(chains) -> float:
    """Potential scale reduction of ``m >= 2`` chains of equal length ``n``.

    ``W`` is the mean of the within-chain variances (``ddof=1``) and ``B/n``
    the variance of the chain means (``ddof=1``); then
    ``R = sqrt(((n-1)/n W + B/n) / W)``.

    Returns ``inf`` when ``W = 0`` but the chain means differ, and ``1.0``
    when every chain is constant at the same value.
    """
    x = np.asarray(chains, dtype=float)
    if x.ndim != 2 or x.shape[0] < 2 or x.shape[1] < 2:
        raise ConfigurationError("compute_rhat needs >= 2 chains of equal length >= 2")
    if not np.all(np.isfinite(x)):
        raise ConfigurationError("chains contain non-finite values")
    n = x.shape[1]
    W = float(np.mean(np.var(x, axis=1, ddof=1)))
    B_over_n = float(np.var(np.mean(x, axis=1), ddof=1))
    if W == 0.0:
        return math.inf if B_over_n > 0.0 else 1.0
    return math.sqrt(((n - 1) / n * W + B_over_n) / W)


def _counts_from(source, post_burn_in):
    if hasattr(source, "acceptance_counts"):
        return source.acceptance_counts(post_burn_in)
    if hasattr(source, "accepted") and hasattr(source, "attempted"):
        return {k: (int(source.accepted[k]), int(source.attempted[k])) for k in source.attempted}
    return {k: (int(a), int(n)) for k, (a, n) in dict(source).items()}


def acceptance_report(source, band=ACCEPTANCE_BAND, post_burn_in: bool = True) -> dict:
    """Acceptance rate per kernel family and whether it falls outside ``band``.

    Parameters
    ----------
    source : ChainRecord, ChainState or mapping
        Anything carrying per-kernel ``(accepted, attempted)`` counters.

    Returns
    -------
    dict
        ``{kernel: {"accepted", "attempted", "rate", "flagged"}}``; ``rate``
        and ``flagged`` are ``None`` for a kernel with no attempts.
    """
    lo, hi = band
    out = {}
    for k, (acc, att) in _counts_from(source, post_burn_in).items():
        if att < 0 or acc < 0 or acc > att:
            raise ConfigurationError(f"inconsistent counters for {k!r}: {acc}/{att}")
        if att == 0:
            out[k] = {"accepted": acc, "attempted": 0, "rate": None, "flagged": None}
            continue
        rate = acc / att
        out[k] = {"accepted": acc, "attempted": att, "rate": rate,
                  "flagged": bool(rate < lo or rate > hi)}
    return out


def autocorrelation(series, max_lag: int) -> np.ndarray:
    """Biased sample autocorrelation at lags ``0..max_lag``.

    The lag-``k`` value is ``sum_t (x_t - m)(x_{t+k} - m) / sum_t (x_t - m)^2``.
    A constant series has ``ACF(0) = 1`` and NaN (undefined) at every other lag.
    """
    x = np.asarray(series, dtype=float).ravel()
    if max_lag < 0 or x.size <= max_lag:
        raise ConfigurationError(f"series length {x.size} must exceed max_lag {max_lag}")
    d = x - x.mean()
    denom = float(d @ d)
    acf = np.full(max_lag + 1, np.nan)
    acf[0] = 1.0
    if denom == 0.0:
        return acf
    n = x.size
    for k in range(1, max_lag + 1):
        acf[k] = float(d[: n - k] @ d[k:]) / denom
    return acf


def nearest_rank_percentiles(samples, q=PERCENTILES, axis=0) -> np.ndarray:
    """Nearest-rank percentiles along ``axis``; result has ``len(q)`` leading."""
    s = np.sort(np.asarray(samples, dtype=float), axis=axis)
    n = s.shape[axis]
    if n == 0:
        raise ConfigurationError("no samples")
    ranks = [max(int(math.ceil(p / 100.0 * n)), 1) for p in q]
    return np.stack([np.take(s, r - 1, axis=axis) for r in ranks])


def _moments(x):
    return x.mean(axis=0), x.std(axis=0)


@dataclass
class PosteriorSummary:
    """Per-pixel and scalar posterior summaries of a retained sample set.

    Standard deviations are population (``ddof=0``) values over the
    retained samples.  ``*_pct`` arrays carry the percentiles in
    :data:`PERCENTILES` along their first axis.
    """

    n_samples: int
    tau_mean: np.ndarray
    tau_sd: np.ndarray
    tau_pct: np.ndarray
    theta_mean: np.ndarray
    theta_sd: np.ndarray
    kappa_mean: float
    kappa_sd: float
    kappa_pct: np.ndarray
    alpha_mean: np.ndarray
    alpha_sd: np.ndarray
    alpha_pct: np.ndarray
    sigma2_mean: np.ndarray
    sigma2_sd: np.ndarray
    sigma2_pct: np.ndarray
    percentiles: tuple = PERCENTILES


def summarize(record) -> PosteriorSummary:
    """Moments and nearest-rank percentiles over the retained samples."""
    if record.tau.shape[0] == 0:
        raise ConfigurationError("record has no retained samples")
    tau = np.asarray(record.tau, dtype=float)
    theta = np.asarray(record.theta, dtype=float)
    kappa = np.asarray(record.kappa, dtype=float)
    alpha = np.asarray(record.alpha, dtype=float)
    sigma2 = np.asarray(record.sigma2, dtype=float)
    tm, ts = _moments(tau)
    thm, ths = _moments(theta)
    km, ks = _moments(kappa)
    am, as_ = _moments(alpha)
    sm, ss = _moments(sigma2)
    return PosteriorSummary(
        n_samples=tau.shape[0],
        tau_mean=tm, tau_sd=ts, tau_pct=nearest_rank_percentiles(tau),
        theta_mean=thm, theta_sd=ths,
        kappa_mean=float(km), kappa_sd=float(ks), kappa_pct=nearest_rank_percentiles(kappa),
        alpha_mean=am, alpha_sd=as_, alpha_pct=nearest_rank_percentiles(alpha),
        sigma2_mean=sm, sigma2_sd=ss, sigma2_pct=nearest_rank_percentiles(sigma2),
    )


@dataclass
class DiagnosticsReport:
    """Chain-level diagnostics with a line-oriented ``key = value`` form.

    Schema (one key per line, ``#`` lines are comments)::

        n_chains = <int>
        n_samples = <int>
        rhat = <float | inf | absent>
        rhat_below_1.1 = <true | false | absent>
        rhat_below_1.2 = <true | false | absent>
        rhat_threshold = <float>
        converged = <true | false | absent>
        acceptance.<kernel> = <float | absent>
        acceptance_flag.<kernel> = <true | false | absent>
        acf.<lag> = <float | absent>
    """

    n_chains: int
    n_samples: int
    rhat: float | None
    rhat_threshold: float = 1.1
    acceptance: dict = field(default_factory=dict)
    acceptance_flags: dict = field(default_factory=dict)
    acf: np.ndarray = field(default_factory=lambda: np.empty(0))

    @property
    def rhat_flags(self) -> dict:
        return {t: (None if self.rhat is None else bool(self.rhat < t)) for t in RHAT_THRESHOLDS}

    @property
    def converged(self) -> bool | None:
        return None if self.rhat is None else bool(self.rhat < self.rhat_threshold)

    def to_text(self) -> str:
        def fmt(v):
            if v is None or (isinstance(v, float) and math.isnan(v)):
                return "absent"
            if isinstance(v, bool):
                return "true" if v else "false"
            if isinstance(v, float):
                return "inf" if math.isinf(v) else repr(v)
            return str(v)

        lines = ["# bayesaod diagnostics", f"n_chains = {self.n_chains}",
                 f"n_samples = {self.n_samples}", f"rhat = {fmt(self.rhat)}"]
        for t, flag in self.rhat_flags.items():
            lines.append(f"rhat_below_{t} = {fmt(flag)}")
        lines.append(f"rhat_threshold = {fmt(float(self.rhat_threshold))}")
        lines.append(f"converged = {fmt(self.converged)}")
        for k in sorted(self.acceptance):
            lines.append(f"acceptance.{k} = {fmt(self.acceptance[k])}")
        for k in sorted(self.acceptance_flags):
            lines.append(f"acceptance_flag.{k} = {fmt(self.acceptance_flags[k])}")
        for lag, v in enumerate(self.acf):
            lines.append(f"acf.{lag} = {fmt(float(v))}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str, path="<string>") -> "DiagnosticsReport":
        def val(s, lineno):
            if s == "absent":
                return None
            if s in ("true", "false"):
                return s == "true"
            try:
                return float(s)
            except ValueError:
                raise FormatError(f"bad value {s!r}", line=lineno, path=path) from None

        kv = {}
        for lineno, raw in enumerate(text.splitlines(), start=1):
            if not raw.strip() or raw.startswith("#"):
                continue
            key, sep, rest = raw.partition(" = ")
            if not sep:
                raise FormatError(f"expected 'key = value', got {raw!r}", line=lineno, path=path)
            kv[key] = (rest, lineno)
        def required(key):
            if key not in kv:
                raise FormatError(f"missing key {key!r}", path=path)
            return kv.pop(key)

        def integer(key):
            s, lineno = required(key)
            try:
                return int(s)
            except ValueError:
                raise FormatError(f"{key} must be an integer, got {s!r}", line=lineno, path=path) from None

        n_chains = integer("n_chains")
        n_samples = integer("n_samples")
        rhat = val(*required("rhat"))
        threshold = val(*required("rhat_threshold"))
        acc, flags, acf = {}, {}, {}
        for key, (s, lineno) in kv.items():
            if key.startswith("acceptance."):
                acc[key[len("acceptance."):]] = val(s, lineno)
            elif key.startswith("acceptance_flag."):
                flags[key[len("acceptance_flag."):]] = val(s, lineno)
            elif key.startswith("acf."):
                acf[int(key[4:])] = val(s, lineno)
        acf_arr = np.array([np.nan if acf[k] is None else acf[k] for k in sorted(acf)], dtype=float)
        return cls(n_chains, n_samples, rhat, threshold, acc, flags, acf_arr)


def diagnose(records, max_lag: int = 20, rhat_threshold: float = 1.1,
             band=ACCEPTANCE_BAND) -> DiagnosticsReport:
    """Build a :class:`DiagnosticsReport` from one or more chain records.

    R-hat is computed on the post-burn-in log-posterior traces and is absent
    for a single chain.  Acceptance rates pool the counters of all chains;
    the autocorrelation is that of the first chain's post-burn-in trace.
    """
    records = list(records) if isinstance(records, (list, tuple)) else [records]
    if not records:
        raise ConfigurationError("no chain records")
    traces = [np.asarray(r.log_posterior[_trace_start(r):], dtype=float) for r in records]
    n = min(t.size for t in traces)
    rhat = None
    if len(records) >= 2 and n >= 2:
        rhat = compute_rhat(np.stack([t[:n] for t in traces]))
    pooled = {}
    for r in records:
        for k, (a, m) in r.acceptance_counts(True).items():
            pa, pm = pooled.get(k, (0, 0))
            pooled[k] = (pa + a, pm + m)
    rep = acceptance_report(pooled, band)
    lag = min(max_lag, traces[0].size - 1)
    acf = autocorrelation(traces[0], lag) if lag >= 0 and traces[0].size > 0 else np.empty(0)
    return DiagnosticsReport(
        n_chains=len(records),
        n_samples=int(sum(r.tau.shape[0] for r in records)),
        rhat=rhat,
        rhat_threshold=rhat_threshold,
        acceptance={k: v["rate"] for k, v in rep.items()},
        acceptance_flags={k: v["flagged"] for k, v in rep.items()},
        acf=acf,
    )


def _trace_start(record) -> int:
    """Index of the first post-burn-in entry of ``record.log_posterior``."""
    n = record.log_posterior.shape[0]
    iters = record.accept_log[next(iter(record.accept_log))].shape[0] if record.accept_log else n - 1
    if n == iters + 1:
        return record.burn_in + 1
    # coarser trace (one value per exchange round): scale burn-in accordingly
    per = max(iters // max(n - 1, 1), 1)
    return record.burn_in // per + 1
