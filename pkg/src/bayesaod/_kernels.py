"""Numba kernels for the per-pixel work of the sampler.

All randomness is supplied by the caller as pre-drawn uniforms so that the
kernels are pure functions of their arguments and can run concurrently
without touching any shared generator state.
"""

import math

import numpy as np
from numba import njit

SURROGATE = 0
TABLE = 1

_SQRT2 = math.sqrt(2.0)

# Acklam's rational approximation to the normal quantile
_A = (-3.969683028665376e01, 2.209460984245205e02, -2.759285104469687e02,
      1.383577518672690e02, -3.066479806614716e01, 2.506628277459239e00)
_B = (-5.447609879822406e01, 1.615858368580409e02, -1.556989798598866e02,
      6.680131188771972e01, -1.328068155288572e01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e00,
      -2.549732539343734e00, 4.374664141464968e00, 2.938163982698783e00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e00,
      3.754408661907416e00)


@njit(cache=True, nogil=True)
def ndtr(x):
    return 0.5 * math.erfc(-x / _SQRT2)


@njit(cache=True, nogil=True)
def ndtri(p):
    if p <= 0.0:
        return -np.inf
    if p >= 1.0:
        return np.inf
    plow = 0.02425
    if p < plow:
        q = math.sqrt(-2.0 * math.log(p))
        x = ((((( _C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5]) / \
            ((((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0)
    elif p <= 1.0 - plow:
        q = p - 0.5
        r = q * q
        x = (((((_A[0] * r + _A[1]) * r + _A[2]) * r + _A[3]) * r + _A[4]) * r + _A[5]) * q / \
            (((((_B[0] * r + _B[1]) * r + _B[2]) * r + _B[3]) * r + _B[4]) * r + 1.0)
    else:
        q = math.sqrt(-2.0 * math.log(1.0 - p))
        x = -((((( _C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5]) / \
            ((((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0)
    # two Halley steps take the 1e-9 approximation to full double precision
    for _ in range(2):
        e = ndtr(x) - p
        u = e * math.sqrt(2.0 * math.pi) * math.exp(0.5 * x * x)
        x = x - u / (1.0 + 0.5 * x * u)
    return x


@njit(cache=True, nogil=True)
def trunc_normal(mu, sd, lo, hi, u):
    """Inverse-CDF draw from Normal(mu, sd^2) restricted to [lo, hi]."""
    a = (lo - mu) / sd
    b = (hi - mu) / sd
    # work in the lower tail, where the normal CDF keeps its precision
    flip = a > 0.0
    if flip:
        a, b = -b, -a
    pa = ndtr(a)
    pb = ndtr(b)
    if pb - pa <= 0.0:
        # all mass underflows: return the bound nearest the mean
        x = mu + sd * (-b if flip else b)
    else:
        z = ndtri(pa + u * (pb - pa))
        if z < a:
            z = a
        elif z > b:
            z = b
        x = mu + sd * (-z if flip else z)
    if x < lo:
        x = lo
    elif x > hi:
        x = hi
    return x


@njit(cache=True, nogil=True)
def surrogate_eval(tau, theta, E, P, S, out):
    C, M = E.shape
    for c in range(C):
        k = 0.0
        a = 0.0
        for m in range(M):
            k += theta[m] * E[c, m]
            a += theta[m] * P[c, m]
        e = math.exp(-tau * k)
        out[c] = S[c] * e + a * (1.0 - e)


@njit(cache=True, nogil=True)
def table_eval(tau, theta, nodes, table, out):
    K, M, C = table.shape
    i = np.searchsorted(nodes, tau, side="right") - 1
    if i < 0:
        i = 0
    elif i > K - 2:
        i = K - 2
    w = (tau - nodes[i]) / (nodes[i + 1] - nodes[i])
    for c in range(C):
        acc = 0.0
        for m in range(M):
            acc += theta[m] * ((1.0 - w) * table[i, m, c] + w * table[i + 1, m, c])
        out[c] = acc


@njit(cache=True, nogil=True)
def fm_eval(kind, tau, theta, E, P, S, nodes, table, out):
    if kind == SURROGATE:
        surrogate_eval(tau, theta, E, P, S, out)
    else:
        table_eval(tau, theta, nodes, table, out)


@njit(cache=True, nogil=True)
def fm_batch(kind, tau, theta, E, P, S, nodes, table, out):
    for i in range(tau.shape[0]):
        fm_eval(kind, tau[i], theta[i], E, P, S, nodes, table, out[i])


@njit(cache=True, nogil=True)
def tau_sweep(order, indptr, indices, tau, theta, lobs, lrt, weight, kappa, lo, hi,
              scale, u_prop, u_acc, kind, E, P, S, nodes, table, accepted):
    """One Metropolis-Hastings pass over ``order`` for the AOD field.

    The proposal is the GMRF full conditional with its standard deviation
    multiplied by ``scale``; for ``scale == 1`` prior and proposal cancel and
    only the pixel likelihood ratio remains.  ``tau`` and ``lrt`` are updated
    in place; ``accepted[j]`` records the outcome for ``order[j]``.
    """
    C = lobs.shape[1]
    buf = np.empty(C)
    n_acc = 0
    for j in range(order.shape[0]):
        p = order[j]
        n = indptr[p + 1] - indptr[p]
        extra = 0.0
        if n == 0:
            prop = lo + (hi - lo) * u_prop[j]
        else:
            s = 0.0
            for k in range(indptr[p], indptr[p + 1]):
                s += tau[indices[k]]
            mu = s / n
            prec = n * kappa
            prop = trunc_normal(mu, scale / math.sqrt(prec), lo, hi, u_prop[j])
            if scale != 1.0:
                d_new = prop - mu
                d_old = tau[p] - mu
                extra = -0.5 * prec * (d_new * d_new - d_old * d_old) * (1.0 - 1.0 / (scale * scale))
        fm_eval(kind, prop, theta[p], E, P, S, nodes, table, buf)
        chi_new = 0.0
        chi_old = 0.0
        for c in range(C):
            r_new = lobs[p, c] - buf[c]
            r_old = lobs[p, c] - lrt[p, c]
            chi_new += weight[c] * r_new * r_new
            chi_old += weight[c] * r_old * r_old
        log_ratio = chi_old - chi_new + extra
        ok = False
        if math.isfinite(log_ratio):
            if log_ratio >= 0.0 or math.log(u_acc[j]) < log_ratio:
                ok = True
        if ok:
            tau[p] = prop
            for c in range(C):
                lrt[p, c] = buf[c]
            n_acc += 1
        accepted[j] = ok
    return n_acc


@njit(cache=True, nogil=True)
def theta_sweep(order, tau, theta, lobs, lrt, weight, proposals, u_acc, kind, E, P, S,
                nodes, table, accepted):
    """Independence Metropolis-Hastings pass for the mixing vectors.

    ``proposals[j]`` is a Dirichlet(alpha) draw for pixel ``order[j]``; the
    proposal density equals the prior, so only the likelihood ratio enters.
    """
    C = lobs.shape[1]
    M = theta.shape[1]
    buf = np.empty(C)
    n_acc = 0
    for j in range(order.shape[0]):
        p = order[j]
        fm_eval(kind, tau[p], proposals[j], E, P, S, nodes, table, buf)
        chi_new = 0.0
        chi_old = 0.0
        for c in range(C):
            r_new = lobs[p, c] - buf[c]
            r_old = lobs[p, c] - lrt[p, c]
            chi_new += weight[c] * r_new * r_new
            chi_old += weight[c] * r_old * r_old
        log_ratio = chi_old - chi_new
        ok = False
        if math.isfinite(log_ratio):
            if log_ratio >= 0.0 or math.log(u_acc[j]) < log_ratio:
                ok = True
        if ok:
            for m in range(M):
                theta[p, m] = proposals[j, m]
            for c in range(C):
                lrt[p, c] = buf[c]
            n_acc += 1
        accepted[j] = ok
    return n_acc
