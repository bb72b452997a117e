"""Complex angular central Gaussian mixture model over normalized
observation vectors: density, E/M steps, and standalone clustering.

Shapes follow the package conventions (K components, T frames, F bins,
M channels):
    psi:   (T, F, M) complex unit vectors (SpatialFeatures.data)
    B:     (K, F, M, M) Hermitian positive definite
    pi:    (K, T) time-varying, frequency-shared mixture weights
    masks: (K, T, F) posteriors, simplex over K per (t, f)
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.special

from . import _kernels
from .dsp import SpatialFeatures

EPS_REG = 1e-6  # scaled identity loading, relative to trace(B)/M
PI_FLOOR = 1e-6


@dataclass
class CacgmmParams:
    B: np.ndarray
    pi: np.ndarray
    # Bins where an M-step had no responsibility mass and kept the old B.
    stale: np.ndarray = field(default=None)

    @property
    def n_components(self):
        return self.B.shape[0]


def _log_norm_const(B):
    """ln[(M-1)! / (2 pi^M det B)] per (k, f) via Cholesky log-dets."""
    M = B.shape[-1]
    chol = np.linalg.cholesky(B)
    logdet = 2.0 * np.sum(np.log(np.abs(np.diagonal(chol, axis1=-2, axis2=-1).real)), axis=-1)
    return scipy.special.gammaln(M) - np.log(2.0) - M * np.log(np.pi) - logdet


def regularize(B):
    """Hermitian-symmetrize and add scaled identity loading."""
    B = 0.5 * (B + np.conj(np.swapaxes(B, -1, -2)))
    M = B.shape[-1]
    tr = np.trace(B, axis1=-2, axis2=-1).real
    eye = np.eye(M)
    return B + (EPS_REG * tr / M)[..., None, None] * eye


def cacg_logpdf(psi, B):
    """Log-density of the complex angular central Gaussian.

    ln p = ln[(M-1)!/(2 pi^M det B)] - M ln(psi^H B^-1 psi)

    Args:
        psi: (..., M) unit vectors; supports (T, F, M) with B (K, F, M, M)
        B: Hermitian PD parameter(s)

    Returns:
        log-densities; for the (T, F, M) x (K, F, M, M) case, (K, T, F).
    """
    psi = np.asarray(psi, dtype=np.complex128)
    B = np.asarray(B, dtype=np.complex128)
    if psi.ndim == 1 and B.ndim == 2:
        Breg = regularize(B[None, None])[0, 0]
        quad = np.real(np.conj(psi) @ np.linalg.solve(Breg, psi))
        M = psi.shape[0]
        return float(_log_norm_const(Breg[None])[0] - M * np.log(quad))
    if psi.ndim == 3 and B.ndim == 4:
        Breg = regularize(B)
        binv = np.linalg.inv(Breg)
        quad = _kernels.cacg_quadratic(psi, binv)  # (K, T, F)
        M = psi.shape[-1]
        return _log_norm_const(Breg)[:, None, :] - M * np.log(quad)
    raise ValueError(f"unsupported shapes psi{psi.shape}, B{B.shape}")


def _resolve_degenerate(psi):
    if isinstance(psi, SpatialFeatures):
        degenerate = psi.degenerate
        data = psi.data
    else:
        data = np.asarray(psi)
        degenerate = None
    if degenerate is None:
        degenerate = np.zeros(data.shape[:2], dtype=bool)
    return data, degenerate


def e_step(psi, params, prior_masks=None):
    """Posterior component masks gamma_{k,t,f}.

    gamma proportional to prior * cacg density; the prior is pi_{k,t} in
    standalone mode, or the supplied per-bin masks in prior mode (weights
    stay fixed there). A one-hot prior therefore pins the posterior.
    """
    data, _ = _resolve_degenerate(psi)
    log_like = cacg_logpdf(data, params.B)  # (K, T, F)
    if prior_masks is not None:
        with np.errstate(divide="ignore"):
            log_prior = np.log(prior_masks)
    else:
        with np.errstate(divide="ignore"):
            log_prior = np.log(params.pi)[:, :, None]
    log_post = log_prior + log_like
    log_post -= scipy.special.logsumexp(log_post, axis=0, keepdims=True)
    return np.exp(log_post)


def m_step(psi, gamma, params):
    """Fixed-point update of the shape matrices.

    B_{k,f} <- M * sum_t gamma psi psi^H / (psi^H B^-1 psi) / sum_t gamma,
    then Hermitian-symmetrized, trace-normalized to M, and loaded with a
    scaled identity. Degenerate-flagged bins contribute nothing; bins with
    zero responsibility mass keep their previous B (flagged stale).
    """
    data, degenerate = _resolve_degenerate(psi)
    M = data.shape[-1]
    binv = np.linalg.inv(regularize(params.B))
    quad = _kernels.cacg_quadratic(data, binv)  # (K, T, F)
    weights = gamma / np.maximum(quad, 1e-300)
    if degenerate.any():
        weights = weights * ~degenerate[None, :, :]
    scatter = _kernels.cacg_scatter(data, weights)  # (K, F, M, M)
    denom = (gamma * ~degenerate[None, :, :]).sum(axis=1)  # (K, F)
    stale = denom <= 0.0
    safe = np.where(stale, 1.0, denom)
    B = M * scatter / safe[:, :, None, None]
    B = 0.5 * (B + np.conj(np.swapaxes(B, -1, -2)))
    tr = np.trace(B, axis1=-2, axis2=-1).real
    tr = np.where(tr <= 0.0, 1.0, tr)
    B = B * (M / tr)[:, :, None, None]
    B = B + EPS_REG * np.eye(M)
    if stale.any():
        B = np.where(stale[:, :, None, None], params.B, B)
    return CacgmmParams(B, params.pi, stale=stale)


def log_likelihood(psi, params, prior_masks=None):
    """Data log-likelihood sum over non-degenerate bins of
    ln sum_k prior * p(psi | B_k); the E-M objective being ascended."""
    data, degenerate = _resolve_degenerate(psi)
    log_like = cacg_logpdf(data, params.B)
    if prior_masks is not None:
        with np.errstate(divide="ignore"):
            log_prior = np.log(prior_masks)
    else:
        with np.errstate(divide="ignore"):
            log_prior = np.log(params.pi)[:, :, None]
    total = scipy.special.logsumexp(log_prior + log_like, axis=0)
    return float(total[~degenerate].sum())


def init_params(n_components, n_frames, n_bins, n_channels, seed=0):
    """Random responsibility init followed by one M-step-like scaling:
    B starts at identity, pi uniform."""
    B = np.broadcast_to(
        np.eye(n_channels, dtype=np.complex128), (n_components, n_bins, n_channels, n_channels)
    ).copy()
    pi = np.full((n_components, n_frames), 1.0 / n_components)
    return CacgmmParams(B, pi)


def fit(psi, n_components, n_iter=20, seed=0, prior_masks=None):
    """Standalone E-M clustering of spatial features.

    Alternates the E-step, the weight update pi_{k,t} <- mean_f gamma, and
    the fixed-point M-step. With ``prior_masks`` the weights are never
    re-estimated (the masks act as fixed per-bin priors).

    Returns:
        (CacgmmParams, masks (K, T, F), history dict with the per-iteration
        log-likelihood)
    """
    data, degenerate = _resolve_degenerate(psi)
    t_frames, n_bins, n_channels = data.shape
    if prior_masks is None and n_components < 1:
        raise ValueError("n_components must be >= 1")
    rng = np.random.default_rng(seed)
    params = init_params(n_components, t_frames, n_bins, n_channels, seed=seed)
    # Frame-coherent random init: every bin of a frame starts on the same
    # randomly drawn component. Per-bin random responsibilities leave the
    # bins in independent component permutations, a symmetric saddle the
    # frequency-shared weights escape only slowly; frame-level draws seed
    # one consistent permutation instead.
    assign = rng.integers(n_components, size=t_frames)
    gamma = np.full((n_components, t_frames, n_bins), 0.1 / max(n_components - 1, 1))
    gamma[assign, np.arange(t_frames), :] = 0.9
    if n_components == 1:
        gamma = np.ones((1, t_frames, n_bins))
    if prior_masks is not None:
        gamma = np.asarray(prior_masks, dtype=np.float64)
    params = m_step(psi, gamma, params)
    if prior_masks is None:
        params = CacgmmParams(params.B, _update_pi(gamma), params.stale)
    history = {"log_likelihood": []}
    masks = gamma
    for _ in range(n_iter):
        masks = e_step(psi, params, prior_masks=prior_masks)
        if prior_masks is None:
            params = CacgmmParams(params.B, _update_pi(masks), params.stale)
        params = m_step(psi, masks, params)
        history["log_likelihood"].append(
            log_likelihood(psi, params, prior_masks=prior_masks)
        )
    masks = e_step(psi, params, prior_masks=prior_masks)
    return params, masks, history


def _update_pi(gamma):
    """pi_{k,t} = mean over f of gamma, floored and renormalized."""
    pi = gamma.mean(axis=2)
    pi = np.maximum(pi, PI_FLOOR)
    return pi / pi.sum(axis=0, keepdims=True)
