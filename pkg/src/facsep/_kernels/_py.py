"""Pure-numpy implementations of the hot per-bin kernels.

These are the reference/fallback versions of the routines in
``facsep._kernels._native``.  Both backends must agree to within a few
ulps; ``tests/test_kernels.py`` enforces this whenever the compiled
extension is importable.
"""

import numpy as np
import scipy.special

_LOG_2PI = float(np.log(2.0 * np.pi))


def log_ndtr(x):
    """Log of the standard normal CDF, finite for any finite argument."""
    return scipy.special.log_ndtr(np.asarray(x, dtype=np.float64))


def lifted_max_logpdf(y, mu, sigma):
    """Joint log-density of (mixture value, dominant index) under a max model.

    Args:
        y: observed values, shape (T, F)
        mu: per-source means, shape (K, T, F)
        sigma: per-source standard deviations, shape (K, T, F), all > 0

    Returns:
        out: shape (K, T, F); out[k] = log N(y; mu[k], sigma[k])
             + sum over j != k of log Phi(y; mu[j], sigma[j]),
             i.e. the log-probability that source k takes value y while
             every other source stays below it.
    """
    y = np.asarray(y, dtype=np.float64)
    mu = np.asarray(mu, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    a = (y[None, :, :] - mu) / sigma
    log_n = -0.5 * a * a - np.log(sigma) - 0.5 * _LOG_2PI
    log_phi = scipy.special.log_ndtr(a)
    return log_n + (log_phi.sum(axis=0)[None, :, :] - log_phi)


def cacg_quadratic(psi, binv):
    """Hermitian quadratic forms psi^H B^-1 psi for every (k, t, f).

    Args:
        psi: unit observation vectors, shape (T, F, M) complex
        binv: inverse shape matrices, shape (K, F, M, M) complex Hermitian

    Returns:
        out: shape (K, T, F) float64 (real part; imaginary part is
             numerically zero for Hermitian binv)
    """
    out = np.einsum("tfm,kfmn,tfn->ktf", psi.conj(), binv, psi, optimize=True)
    return np.ascontiguousarray(out.real)


def cacg_scatter(psi, w):
    """Weighted outer-product accumulation over time.

    Args:
        psi: observation vectors, shape (T, F, M) complex
        w: per-bin weights, shape (K, T, F) float64

    Returns:
        out: shape (K, F, M, M) complex; out[k, f] = sum_t w[k, t, f]
             * psi[t, f] psi[t, f]^H
    """
    return np.einsum("ktf,tfm,tfn->kfmn", w, psi, psi.conj(), optimize=True)
