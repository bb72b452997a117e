"""Mask-based MVDR beamforming.

Covariances are per-bin Hermitian (M, M) matrices estimated from masked
observations; weights follow the covariance-ratio formulation
w_f = (Phi_n^-1 Phi_t / trace(Phi_n^-1 Phi_t)) e_ref.
"""

from dataclasses import dataclass, field

import numpy as np

from .dsp import ComplexSpectrogram

DIAG_LOADING = 1e-6


@dataclass
class SpatialCovariance:
    """phi: (F, M, M) Hermitian; fallback flags bins with zero mask mass."""

    phi: np.ndarray
    fallback: np.ndarray = field(default=None)


@dataclass
class BeamformerWeights:
    """w: (F, M) complex; output is w_f^H Y_{t,f} at the reference channel scale."""

    w: np.ndarray
    ref_channel: int = 0


def masked_covariance(spec, mask):
    """Mask-weighted spatial covariance per bin.

    Phi_f = sum_t m_{t,f} Y Y^H / sum_t m_{t,f}; bins with zero mask mass
    fall back to identity and are flagged.
    """
    y = spec.data if isinstance(spec, ComplexSpectrogram) else np.asarray(spec)
    mask = np.asarray(mask, dtype=np.float64)
    if mask.shape != y.shape[1:]:
        raise ValueError(f"mask shape {mask.shape} != (T, F) {y.shape[1:]}")
    n_channels = y.shape[0]
    num = np.einsum("tf,mtf,ntf->fmn", mask, y, np.conj(y))
    denom = mask.sum(axis=0)  # (F,)
    fallback = denom <= 0.0
    safe = np.where(fallback, 1.0, denom)
    phi = num / safe[:, None, None]
    if fallback.any():
        phi[fallback] = np.eye(n_channels)
    phi = 0.5 * (phi + np.conj(np.swapaxes(phi, -1, -2)))
    return SpatialCovariance(phi, fallback)


def mvdr_weights(phi_target, phi_noise, ref_channel=0):
    """Covariance-ratio MVDR weights per bin.

    The noise covariance receives scaled diagonal loading before inversion.
    Raises if the target covariance carries (numerically) no energy.
    """
    phi_t = phi_target.phi if isinstance(phi_target, SpatialCovariance) else phi_target
    phi_n = phi_noise.phi if isinstance(phi_noise, SpatialCovariance) else phi_noise
    n_bins, n_channels, _ = phi_t.shape
    tr_t = np.trace(phi_t, axis1=-2, axis2=-1).real
    if np.all(tr_t <= 1e-300):
        raise ValueError("no target energy in covariance")
    loading = DIAG_LOADING * np.trace(phi_n, axis1=-2, axis2=-1).real / n_channels
    phi_n_loaded = phi_n + loading[:, None, None] * np.eye(n_channels)
    numerator = np.linalg.solve(phi_n_loaded, phi_t)  # (F, M, M)
    denom = np.trace(numerator, axis1=-2, axis2=-1)
    denom = np.where(np.abs(denom) < 1e-300, 1.0, denom)
    w = numerator[:, :, ref_channel] / denom[:, None]
    return BeamformerWeights(w, ref_channel)


def apply(spec, weights):
    """Beamform: output_{t,f} = w_f^H Y_{t,f}, single-channel spectrogram."""
    y = spec.data if isinstance(spec, ComplexSpectrogram) else np.asarray(spec)
    w = weights.w if isinstance(weights, BeamformerWeights) else np.asarray(weights)
    if w.shape != (y.shape[2], y.shape[0]):
        raise ValueError(f"weights shape {w.shape} != (F, M) {(y.shape[2], y.shape[0])}")
    out = np.einsum("fm,mtf->tf", np.conj(w), y)
    if isinstance(spec, ComplexSpectrogram):
        return ComplexSpectrogram(out[None], spec.config)
    return out


def separate_sources(spec, masks, ref_channel=0):
    """MVDR per source: target covariance from each mask, noise covariance
    from its complement (pooling the other sources and the noise).

    Args:
        spec: ComplexSpectrogram (M, T, F)
        masks: (K, T, F)

    Returns:
        list of single-channel ComplexSpectrogram, one per mask row.
    """
    outputs = []
    for k in range(masks.shape[0]):
        phi_t = masked_covariance(spec, masks[k])
        phi_n = masked_covariance(spec, 1.0 - masks[k])
        w = mvdr_weights(phi_t, phi_n, ref_channel)
        outputs.append(apply(spec, w))
    return outputs
