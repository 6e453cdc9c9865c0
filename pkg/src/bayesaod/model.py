"""Likelihood, priors and hyperpriors of the hierarchical retrieval model.

Every density here is returned on the log scale and up to additive
constants that do not depend on the argument being sampled, unless the
docstring says otherwise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from .exceptions import ConfigurationError, DomainError
from .forward import ForwardModel, check_simplex
from .lattice import Adjacency, BlockGrid

__all__ = [
    "AerosolState",
    "HyperState",
    "RadianceBlock",
    "sigma_init",
    "chi_square_pixel",
    "log_likelihood",
    "log_gmrf_prior",
    "log_dirichlet_prior",
    "log_alpha_hyperprior",
    "log_alpha_conditional",
    "log_sigma2_conditional",
    "log_posterior",
]

LOG_2PI = np.log(2.0 * np.pi)


@dataclass
class AerosolState:
    """AOD per clear pixel, shape ``(P,)``, and mixing vectors, shape ``(P, M)``."""

    tau: np.ndarray
    theta: np.ndarray

    def __post_init__(self):
        self.tau = np.array(self.tau, dtype=float).ravel()
        self.theta = np.array(self.theta, dtype=float)
        if self.theta.ndim != 2 or self.theta.shape[0] != self.tau.shape[0]:
            raise ConfigurationError(
                f"theta must have shape (P, M) with P={self.tau.shape[0]}, got {self.theta.shape}"
            )

    @property
    def n_pixels(self) -> int:
        return self.tau.shape[0]

    def copy(self) -> "AerosolState":
        return AerosolState(self.tau.copy(), self.theta.copy())

    def validate(self, support, tol=1e-10) -> None:
        lo, hi = support
        if np.any(~np.isfinite(self.tau)) or np.any(self.tau < lo) or np.any(self.tau > hi):
            raise DomainError(f"tau outside [{lo}, {hi}]")
        check_simplex(self.theta, tol)


@dataclass
class HyperState:
    kappa: float
    alpha: np.ndarray
    sigma2: np.ndarray

    def __post_init__(self):
        self.kappa = float(self.kappa)
        self.alpha = np.array(self.alpha, dtype=float).ravel()
        self.sigma2 = np.array(self.sigma2, dtype=float).ravel()
        for name, v in (("kappa", np.array([self.kappa])), ("alpha", self.alpha), ("sigma2", self.sigma2)):
            if np.any(~np.isfinite(v)) or np.any(v <= 0):
                raise ConfigurationError(f"{name} must be finite and strictly positive")

    def copy(self) -> "HyperState":
        return HyperState(self.kappa, self.alpha.copy(), self.sigma2.copy())


class RadianceBlock:
    """Observed radiances of the clear pixels of a block, shape ``(P, C)``."""

    def __init__(self, grid: BlockGrid, radiance, n_components: int = 4):
        L = np.array(radiance, dtype=float)
        if L.ndim != 2 or L.shape[0] != grid.n_clear:
            raise ConfigurationError(
                f"radiance must have shape (n_clear={grid.n_clear}, C), got {L.shape}"
            )
        if not np.all(np.isfinite(L)) or np.any(L <= 0):
            raise ConfigurationError("radiances must be finite and positive")
        L.setflags(write=False)
        self.grid = grid
        self.radiance = L
        self.n_components = int(n_components)

    @property
    def n_pixels(self) -> int:
        return self.radiance.shape[0]

    @property
    def n_channels(self) -> int:
        return self.radiance.shape[1]

    @property
    def channel_means(self) -> np.ndarray:
        if self.n_pixels == 0:
            raise ConfigurationError("block has no clear pixels")
        return self.radiance.mean(axis=0)

    def __eq__(self, other):
        if not isinstance(other, RadianceBlock):
            return NotImplemented
        return (self.grid == other.grid and self.n_components == other.n_components
                and np.array_equal(self.radiance, other.radiance))

    __hash__ = None

    def __repr__(self):
        return (f"RadianceBlock({self.grid.rows}x{self.grid.cols}, clear={self.n_pixels}, "
                f"C={self.n_channels}, M={self.n_components})")


def sigma_init(block: RadianceBlock) -> np.ndarray:
    """Per-channel error SD: 5% of the smaller of 0.04 and the channel mean."""
    return 0.05 * np.minimum(0.04, block.channel_means)


def chi_square_pixel(L_p, tau, theta, sigma2, fm: ForwardModel) -> float:
    resid = np.asarray(L_p, dtype=float) - fm.evaluate(tau, theta)
    return float(np.sum(resid**2 / (2.0 * np.asarray(sigma2, dtype=float))))


def log_likelihood(block: RadianceBlock, state: AerosolState, sigma2, fm: ForwardModel,
                   normalized: bool = False, lrt=None) -> float:
    """Negative summed weighted least squares over all clear pixels.

    With ``normalized=True`` the Gaussian constant
    ``-(P/2) sum_c log(2 pi sigma_c^2)`` is added; callers sampling
    ``sigma2`` need it, pure (tau, theta) ratios do not.  ``lrt`` may carry
    precomputed forward radiances for ``state``.
    """
    sigma2 = np.asarray(sigma2, dtype=float)
    if lrt is None:
        lrt = fm(state.tau, state.theta)
    resid = block.radiance - lrt
    value = -float(np.sum(resid**2 / (2.0 * sigma2)))
    if normalized:
        value -= 0.5 * block.n_pixels * float(np.sum(LOG_2PI + np.log(sigma2)))
    return value


def log_gmrf_prior(tau, kappa: float, adj: Adjacency) -> float:
    """Intrinsic first-order GMRF: ``(P-1)/2 log k - k/2 sum_edges (diff)^2``."""
    if not kappa > 0:
        raise DomainError("kappa must be positive")
    tau = np.asarray(tau, dtype=float)
    P = tau.shape[0]
    return 0.5 * (P - 1) * np.log(kappa) - 0.5 * kappa * adj.edge_sum_sq(tau)


def log_dirichlet_prior(theta, alpha) -> float:
    """Sum of per-pixel Dirichlet log densities; ``-inf`` on a forbidden zero."""
    theta = np.atleast_2d(np.asarray(theta, dtype=float))
    alpha = np.asarray(alpha, dtype=float)
    P = theta.shape[0]
    const = gammaln(alpha.sum()) - gammaln(alpha).sum()
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = (alpha - 1.0) * np.log(theta)
    # 0 * log(0) contributes nothing when alpha_m == 1
    terms = np.where((alpha == 1.0) & (theta == 0.0), 0.0, terms)
    total = float(np.sum(terms))
    if np.isnan(total):
        return -np.inf
    return P * const + total


def log_alpha_hyperprior(alpha) -> float:
    return float(np.sum(1.0 - np.asarray(alpha, dtype=float)))


def log_alpha_conditional(alpha, t_alpha, P: int) -> float:
    """``log p(alpha | theta)`` through ``t_alpha = sum_p log theta_p``."""
    alpha = np.asarray(alpha, dtype=float)
    return (float(np.sum((alpha - 1.0) * np.asarray(t_alpha, dtype=float)))
            - P * (float(np.sum(gammaln(alpha))) - float(gammaln(alpha.sum())))
            + log_alpha_hyperprior(alpha))


def log_sigma2_conditional(sigma2_c, ssr_c, P: int):
    """Scaled inverse-chi-square conditional of one channel variance."""
    sigma2_c = np.asarray(sigma2_c, dtype=float)
    return -(0.5 * P + 1.0) * np.log(sigma2_c) - ssr_c / (2.0 * sigma2_c)


def log_posterior(block: RadianceBlock, state: AerosolState, hyper: HyperState,
                  fm: ForwardModel, adj: Adjacency, lrt=None) -> float:
    """Joint log posterior of all sampled quantities, up to a constant.

    Includes the normalized likelihood, the GMRF and Dirichlet priors and the
    hyperpriors ``p(kappa) ~ 1/kappa``, ``p(sigma_c^2) ~ 1/sigma_c^2`` and
    ``p(alpha) ~ exp(sum(1 - alpha))``.
    """
    return (log_likelihood(block, state, hyper.sigma2, fm, normalized=True, lrt=lrt)
            + log_gmrf_prior(state.tau, hyper.kappa, adj)
            + log_dirichlet_prior(state.theta, hyper.alpha)
            + log_alpha_hyperprior(hyper.alpha)
            - np.log(hyper.kappa)
            - float(np.sum(np.log(hyper.sigma2))))
