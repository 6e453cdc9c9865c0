"""Synthetic blocks drawn from the model's own priors.

The true AOD field comes from the intrinsic GMRF with its flat (constant)
direction pinned to zero mean, shifted to a chosen level; mixing vectors
are independent Dirichlet draws; radiances are the forward model plus
Gaussian noise whose SD is a fraction of each channel's mean radiance.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .exceptions import ConfigurationError
from .forward import ForwardModel
from .lattice import Adjacency, BlockGrid, build_adjacency
from .model import AerosolState, RadianceBlock

__all__ = ["SimConfig", "SimTruth", "sample_gmrf", "sample_theta_field", "simulate_block",
           "laplacian_eigen"]

MAX_REDRAWS = 100
RADIANCE_FLOOR = 1e-6


@dataclass(frozen=True)
class SimConfig:
    rows: int = 32
    cols: int = 128
    kappa: float = 100.0
    alpha: tuple[float, ...] = (0.8, 0.4, 0.2, 0.2)
    noise_fraction: float = 0.10
    center: float = 1.0
    seed: int = 0
    resolution_km: float = 4.4
    clear_mask: np.ndarray | None = field(default=None, compare=False)

    def __post_init__(self):
        if not self.kappa > 0:
            raise ConfigurationError("kappa must be positive")
        if self.noise_fraction < 0:
            raise ConfigurationError("noise_fraction must be non-negative")
        if len(self.alpha) < 1 or any(not a > 0 for a in self.alpha):
            raise ConfigurationError("alpha entries must be positive")
        object.__setattr__(self, "alpha", tuple(float(a) for a in self.alpha))

    def grid(self) -> BlockGrid:
        return BlockGrid(self.rows, self.cols, self.resolution_km, self.clear_mask)


@dataclass
class SimTruth:
    state: AerosolState
    kappa: float
    alpha: np.ndarray
    sigma: np.ndarray
    clean_radiance: np.ndarray
    n_clipped: int = 0


def _path_eigen(n):
    """Eigenpairs of the path-graph Laplacian (a DCT-II basis)."""
    k = np.arange(n)
    lam = 2.0 - 2.0 * np.cos(np.pi * k / n)
    j = np.arange(n)[:, None]
    vec = np.cos(np.pi * k[None, :] * (j + 0.5) / n)
    vec /= np.linalg.norm(vec, axis=0)
    return lam, vec


@lru_cache(maxsize=8)
def _eigen_cached(n, indptr_bytes, indices_bytes, rows, cols, full):
    if full:
        # rook grid Laplacian is the Kronecker sum of two path Laplacians
        lr, vr = _path_eigen(rows)
        lc, vc = _path_eigen(cols)
        lam = (lr[:, None] + lc[None, :]).ravel()
        return lam, (vr, vc)
    indptr = np.frombuffer(indptr_bytes, dtype=np.int64)
    indices = np.frombuffer(indices_bytes, dtype=np.int64)
    a = np.zeros((n, n))
    for p in range(n):
        a[p, indices[indptr[p]:indptr[p + 1]]] = 1.0
    lap = np.diag(a.sum(axis=1)) - a
    lam, vec = np.linalg.eigh(lap)
    return lam, vec


def laplacian_eigen(grid: BlockGrid, adj: Adjacency):
    """Eigenvalues and eigenvectors of the clear-pixel graph Laplacian.

    For a fully clear grid the eigenvectors are returned in factored form
    ``(row_basis, col_basis)``.
    """
    full = bool(grid.clear_mask.all())
    return _eigen_cached(adj.n_pixels, adj.indptr.tobytes(), adj.indices.tobytes(),
                         grid.rows, grid.cols, full)


def sample_gmrf(grid: BlockGrid, adj: Adjacency, kappa: float, center: float,
                rng: np.random.Generator, support=(0.0, 3.0), per_component: bool = False,
                return_clipped: bool = False):
    """Draw an intrinsic GMRF field with precision ``kappa``.

    The field is expanded in the Laplacian eigenbasis with independent
    ``N(0, 1/(kappa lambda_i))`` coefficients on the nonzero eigenvalues, so
    its mean over every connected component is zero.  It is then shifted by
    ``center`` and clipped to ``support``; a warning is issued when more than
    1% of pixels clip.

    Raises
    ------
    ConfigurationError
        If the clear lattice is disconnected and ``per_component`` is False.
    """
    if not kappa > 0:
        raise ConfigurationError("kappa must be positive")
    n = adj.n_pixels
    if n == 0:
        return (np.empty(0), 0) if return_clipped else np.empty(0)
    if adj.n_components() > 1 and not per_component:
        raise ConfigurationError("clear lattice is disconnected; pass per_component=True")
    lam, vec = laplacian_eigen(grid, adj)
    tol = 1e-9 * max(float(lam.max()), 1.0)
    keep = lam > tol
    coef = np.zeros(lam.size)
    coef[keep] = rng.standard_normal(int(keep.sum())) / np.sqrt(kappa * lam[keep])
    if isinstance(vec, tuple):
        vr, vc = vec
        field_ = (vr @ coef.reshape(vr.shape[1], vc.shape[1]) @ vc.T).ravel()
    else:
        field_ = vec @ coef
    tau = field_ + center
    lo, hi = support
    clipped = int(np.count_nonzero((tau < lo) | (tau > hi)))
    if clipped > 0.01 * n:
        warnings.warn(f"{clipped} of {n} simulated AOD values clipped to the support", stacklevel=2)
    tau = np.clip(tau, lo, hi)
    return (tau, clipped) if return_clipped else tau


def sample_theta_field(n_pixels: int, alpha, rng: np.random.Generator) -> np.ndarray:
    alpha = np.asarray(alpha, dtype=float)
    if np.any(alpha <= 0):
        raise ConfigurationError("alpha must be positive")
    theta = rng.dirichlet(alpha, n_pixels)
    tiny = np.finfo(float).tiny
    if np.any(theta < tiny):
        theta = np.maximum(theta, tiny)
        theta /= theta.sum(axis=1, keepdims=True)
    return theta


def simulate_block(config: SimConfig, fm: ForwardModel, rng: np.random.Generator | None = None):
    """Simulate a radiance block and its true state.

    Returns
    -------
    (RadianceBlock, SimTruth)
    """
    rng = np.random.default_rng(np.random.SeedSequence(config.seed)) if rng is None else rng
    if len(config.alpha) != fm.n_components:
        raise ConfigurationError(
            f"alpha has {len(config.alpha)} entries, forward model has {fm.n_components} components"
        )
    grid = config.grid()
    adj = build_adjacency(grid)
    tau, clipped = sample_gmrf(grid, adj, config.kappa, config.center, rng, fm.support,
                               per_component=True, return_clipped=True)
    theta = sample_theta_field(grid.n_clear, config.alpha, rng)
    clean = fm(tau, theta)
    sigma = config.noise_fraction * clean.mean(axis=0)
    noisy = clean + sigma * rng.standard_normal(clean.shape)
    bad = noisy <= 0
    tries = 0
    while np.any(bad) and tries < MAX_REDRAWS:
        redraw = clean + sigma * rng.standard_normal(clean.shape)
        noisy = np.where(bad, redraw, noisy)
        bad = noisy <= 0
        tries += 1
    noisy = np.maximum(noisy, RADIANCE_FLOOR)
    block = RadianceBlock(grid, noisy, fm.n_components)
    truth = SimTruth(AerosolState(tau, theta), config.kappa, np.array(config.alpha), sigma, clean, clipped)
    return block, truth
