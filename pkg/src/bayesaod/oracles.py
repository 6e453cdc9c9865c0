"""Brute-force reference computations used by the test suite.

Nothing in this module imports the production code paths: the lattice,
forward model and densities are re-derived here from their definitions so
that agreement between the two is evidence, not tautology.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate, stats

__all__ = [
    "MAX_GRID_POINTS",
    "QuadratureSpec",
    "QuadratureResult",
    "surrogate_radiance",
    "grid_edges",
    "posterior_by_quadrature",
    "gof_test",
    "naive_rhat",
    "naive_acf",
    "naive_moments",
    "naive_nearest_rank",
]

MAX_GRID_POINTS = 10**7


def surrogate_radiance(E, Pm, S, tau, theta):
    """Plain-Python evaluation of the saturating surrogate for one pixel."""
    out = []
    for c in range(len(S)):
        k = sum(theta[m] * E[c][m] for m in range(len(theta)))
        a = sum(theta[m] * Pm[c][m] for m in range(len(theta)))
        t = math.exp(-tau * k)
        out.append(S[c] * t + a * (1.0 - t))
    return out


def grid_edges(rows: int, cols: int):
    """Rook edges of a fully clear ``rows x cols`` lattice, row-major labels."""
    edges = []
    for r in range(rows):
        for c in range(cols):
            p = r * cols + c
            if c + 1 < cols:
                edges.append((p, p + 1))
            if r + 1 < rows:
                edges.append((p, p + cols))
    return edges


@dataclass(frozen=True)
class QuadratureSpec:
    """Grid resolution and fixed hyperparameters of a quadrature run.

    ``theta`` fixes each pixel's mixing vector; otherwise ``alpha`` must have
    two entries and each pixel's mixing weight is integrated over
    ``n_theta`` cells of the 1-simplex with exact Beta cell masses.
    """

    kappa: float
    sigma2: tuple
    support: tuple = (0.0, 3.0)
    n_tau: int = 48
    n_theta: int = 200
    theta: tuple | None = None
    alpha: tuple | None = None

    def n_points(self, n_pixels: int) -> int:
        per_pixel = self.n_tau ** n_pixels
        return per_pixel + (0 if self.theta is not None else n_pixels * self.n_tau * self.n_theta)


@dataclass
class QuadratureResult:
    mean: np.ndarray
    sd: np.ndarray
    tau_nodes: np.ndarray
    marginals: np.ndarray  # (P, n_tau) normalized cell masses


def posterior_by_quadrature(radiance, forward, shape, spec: QuadratureSpec) -> QuadratureResult:
    """Per-pixel posterior mean and SD of AOD on a tiny fully clear block.

    The target is ``exp(-sum_p chi2_p) * exp(-kappa/2 sum_edges diff^2)``
    restricted to the support, with each pixel's mixing vector either fixed
    or integrated against its Dirichlet prior (two components).  AOD is
    integrated with the midpoint rule on ``n_tau`` equal cells per pixel.

    Parameters
    ----------
    radiance : array (P, C)
    forward : callable ``(tau, theta) -> C radiances``
    shape : (rows, cols) with ``rows * cols == P <= 4``
    spec : QuadratureSpec
    """
    L = np.asarray(radiance, dtype=float)
    rows, cols = shape
    P, C = L.shape
    if P != rows * cols or P > 4:
        raise ValueError("quadrature supports fully clear blocks of at most 4 pixels")
    if spec.n_points(P) > MAX_GRID_POINTS:
        raise ValueError(f"quadrature grid of {spec.n_points(P)} points exceeds {MAX_GRID_POINTS}")
    sig2 = np.asarray(spec.sigma2, dtype=float)
    lo, hi = spec.support
    h = (hi - lo) / spec.n_tau
    nodes = lo + h * (np.arange(spec.n_tau) + 0.5)

    if spec.theta is not None:
        thetas = [np.asarray(spec.theta[p], dtype=float)[None, :] for p in range(P)]
        weights = [np.ones(1) for _ in range(P)]
    else:
        a1, a2 = spec.alpha
        u = np.linspace(0.0, 1.0, spec.n_theta + 1)
        w = np.diff(stats.beta.cdf(u, a1, a2))
        mid = 0.5 * (u[1:] + u[:-1])
        th = np.column_stack([mid, 1.0 - mid])
        thetas = [th] * P
        weights = [w] * P

    # per-pixel log marginal likelihood over its own mixing vector
    loglik = np.empty((P, spec.n_tau))
    for p in range(P):
        for i, t in enumerate(nodes):
            chi = np.array([sum((L[p, c] - f) ** 2 / (2.0 * sig2[c]) for c, f in enumerate(forward(t, th)))
                            for th in thetas[p]])
            m = chi.min()
            loglik[p, i] = -m + math.log(float(np.sum(weights[p] * np.exp(-(chi - m)))))

    logj = np.zeros((spec.n_tau,) * P)
    for p in range(P):
        sh = [1] * P
        sh[p] = spec.n_tau
        logj = logj + loglik[p].reshape(sh)
    for a, b in grid_edges(rows, cols):
        sa, sb = [1] * P, [1] * P
        sa[a] = spec.n_tau
        sb[b] = spec.n_tau
        logj = logj - 0.5 * spec.kappa * (nodes.reshape(sa) - nodes.reshape(sb)) ** 2
    w = np.exp(logj - logj.max())
    w /= w.sum()
    marg = np.empty((P, spec.n_tau))
    for p in range(P):
        axes = tuple(q for q in range(P) if q != p)
        marg[p] = w.sum(axis=axes) if axes else w
    mean = marg @ nodes
    var = marg @ nodes**2 - mean**2
    return QuadratureResult(mean, np.sqrt(np.maximum(var, 0.0)), nodes, marg)


def _merge_small(observed, expected, min_expected=5.0):
    obs_out, exp_out = [], []
    o_acc = e_acc = 0.0
    for o, e in zip(observed, expected):
        o_acc += o
        e_acc += e
        if e_acc >= min_expected:
            obs_out.append(o_acc)
            exp_out.append(e_acc)
            o_acc = e_acc = 0.0
    if e_acc > 0 or o_acc > 0:
        if exp_out:
            obs_out[-1] += o_acc
            exp_out[-1] += e_acc
        else:
            obs_out.append(o_acc)
            exp_out.append(e_acc)
    return np.array(obs_out), np.array(exp_out)


def gof_test(samples, log_density, bins=30, support=(-np.inf, np.inf)) -> float:
    """Chi-square goodness-of-fit p-value of samples against a 1-D density.

    ``log_density`` may be unnormalized; bin masses are integrated
    numerically and normalized over ``support``.  With an integer ``bins``
    the interior edges span the 0.5%..99.5% sample quantiles and the two
    outer bins extend to the support bounds.  Adjacent bins with expected
    count below 5 are merged.
    """
    x = np.asarray(samples, dtype=float).ravel()
    if x.size < 1000:
        raise ValueError("gof_test needs at least 1000 samples")
    lo, hi = support
    if np.isscalar(bins):
        q0, q1 = np.quantile(x, [0.005, 0.995])
        if q1 <= q0:
            q0, q1 = q0 - 1.0 - abs(q0), q1 + 1.0 + abs(q1)
        inner = np.linspace(q0, q1, int(bins) - 1)
        inner = inner[(inner > lo) & (inner < hi)]
        edges = np.concatenate([[lo], inner, [hi]])
    else:
        edges = np.asarray(bins, dtype=float)
    # shift the log density near its mode to keep exp() in range
    probe = np.clip(np.quantile(x, [0.1, 0.5, 0.9]), np.nextafter(lo, hi), np.nextafter(hi, lo))
    ref = max(float(log_density(v)) for v in probe)
    if not math.isfinite(ref):
        ref = 0.0
    f = lambda v: math.exp(float(log_density(v)) - ref)  # noqa: E731
    mass = np.array([integrate.quad(f, a, b, limit=200)[0] for a, b in zip(edges[:-1], edges[1:])])
    total = mass.sum()
    if not total > 0:
        raise ValueError("density integrates to zero over the support")
    counts, _ = np.histogram(x, edges)
    outside = x.size - counts.sum()
    expected = mass / total * x.size
    obs, exp_ = _merge_small(counts.astype(float), expected)
    if outside:
        return 0.0
    if obs.size < 2:
        return 1.0 if np.allclose(obs, exp_) else 0.0
    chi2 = float(np.sum((obs - exp_) ** 2 / exp_))
    return float(stats.chi2.sf(chi2, obs.size - 1))


def naive_rhat(chains) -> float:
    """Potential scale reduction from explicit loops."""
    m = len(chains)
    n = len(chains[0])
    means = [sum(ch) / n for ch in chains]
    within = [sum((v - mu) ** 2 for v in ch) / (n - 1) for ch, mu in zip(chains, means)]
    W = sum(within) / m
    grand = sum(means) / m
    B = n * sum((mu - grand) ** 2 for mu in means) / (m - 1)
    if W == 0:
        return math.inf if B > 0 else 1.0
    return math.sqrt(((n - 1) / n * W + B / n) / W)


def naive_acf(series, max_lag):
    x = [float(v) for v in series]
    n = len(x)
    mu = sum(x) / n
    c0 = sum((v - mu) ** 2 for v in x)
    return [sum((x[t] - mu) * (x[t + k] - mu) for t in range(n - k)) / c0 for k in range(max_lag + 1)]


def naive_moments(samples):
    """Two-pass mean and population SD along the first axis."""
    a = np.asarray(samples, dtype=float)
    n = a.shape[0]
    mean = sum(a[i] for i in range(n)) / n
    var = sum((a[i] - mean) ** 2 for i in range(n)) / n
    return mean, np.sqrt(var)


def naive_nearest_rank(values, p):
    v = sorted(float(x) for x in values)
    rank = max(math.ceil(p / 100.0 * len(v)), 1)
    return v[rank - 1]
