"""Diagonal-covariance Gaussian mixture spectral model with the
split-doubling training schedule, plus the per-bin dominance terms used by
the factorial mixture-of-sources inference.

Frames are log-magnitude rows of shape (F,); a model holds C components
with per-bin means and variances.
"""

from dataclasses import dataclass

import numpy as np
import scipy.special

from . import _kernels
from .tensor import checkpoint

VARIANCE_FLOOR = 1e-4
_LOG_2PI = float(np.log(2.0 * np.pi))

# Stage-by-stage EM iteration counts for the doubling schedule up to 256
# components (stages 1, 2, 4, ..., 256).
DEFAULT_SPLIT_ITERS = (1, 4, 4, 10, 10, 10, 10, 10, 10)


@dataclass
class GmmParams:
    """weights: (C,) simplex; means/variances: (C, F)."""

    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray

    @property
    def n_components(self):
        return self.weights.shape[0]

    @property
    def n_bins(self):
        return self.means.shape[1]

    def save(self, path):
        checkpoint.save_tensors(
            path,
            {
                "gmm/weights": self.weights,
                "gmm/means": self.means,
                "gmm/variances": self.variances,
            },
        )

    @classmethod
    def load(cls, path):
        blob = checkpoint.load_tensors(path)
        return cls(
            blob["gmm/weights"].astype(np.float64),
            blob["gmm/means"].astype(np.float64),
            blob["gmm/variances"].astype(np.float64),
        )


def logpdf(frames, params):
    """Per-component joint log-likelihood ln pi_c + ln N(x; mu_c, diag var_c).

    Args:
        frames: (F,) or (T, F)

    Returns:
        (C,) or (T, C)
    """
    x = np.atleast_2d(np.asarray(frames, dtype=np.float64))
    if x.shape[1] != params.n_bins:
        raise ValueError(f"frame width {x.shape[1]} != model bins {params.n_bins}")
    # ln N summed over bins, expanded to avoid a (T, C, F) temporary:
    # -(x^2 - 2 x mu + mu^2) / (2 var) - 0.5 ln(2 pi var)
    inv_var = 1.0 / params.variances  # (C, F)
    const = -0.5 * (
        _LOG_2PI * params.n_bins
        + np.log(params.variances).sum(axis=1)
        + (params.means**2 * inv_var).sum(axis=1)
    )  # (C,)
    quad = -0.5 * (x**2) @ inv_var.T + x @ (params.means * inv_var).T
    out = np.log(params.weights)[None, :] + const[None, :] + quad
    return out[0] if np.ndim(frames) == 1 else out


def log_likelihood(frames, params):
    """Total data log-likelihood sum_t ln sum_c exp(logpdf)."""
    lp = logpdf(np.atleast_2d(frames), params)
    return float(scipy.special.logsumexp(lp, axis=1).sum())


def responsibilities(frames, params):
    """Posterior over components per frame, (T, C)."""
    lp = logpdf(np.atleast_2d(frames), params)
    lp -= scipy.special.logsumexp(lp, axis=1, keepdims=True)
    return np.exp(lp)


def _em_iterate(frames, params, n_iter, tol=None):
    """Standard EM on (T, F) frames; returns (params, per-iteration LL)."""
    history = []
    for _ in range(n_iter):
        history.append(log_likelihood(frames, params))
        gamma = responsibilities(frames, params)  # (T, C)
        nk = gamma.sum(axis=0)  # (C,)
        weights = nk / nk.sum()
        safe_nk = np.maximum(nk, 1e-12)
        means = (gamma.T @ frames) / safe_nk[:, None]
        sq = (gamma.T @ (frames**2)) / safe_nk[:, None]
        variances = np.maximum(sq - means**2, VARIANCE_FLOOR)
        params = GmmParams(weights, means, variances)
    history.append(log_likelihood(frames, params))
    return params, history


def _split(params, offset=0.2):
    """Double the component count: mu +- offset * sqrt(var), weights halved."""
    step = offset * np.sqrt(params.variances)
    means = np.concatenate([params.means - step, params.means + step], axis=0)
    variances = np.concatenate([params.variances, params.variances], axis=0)
    weights = np.concatenate([params.weights, params.weights]) / 2.0
    return GmmParams(weights, means, variances)


def train_split(frames, n_components=256, stage_iters=DEFAULT_SPLIT_ITERS):
    """Progressive split training: 1 -> 2 -> 4 -> ... -> n_components.

    Args:
        frames: (T, F) log-magnitude rows pooled over the corpus
        n_components: final component count (power of two)
        stage_iters: EM iterations per stage; the default matches the
            doubling schedule up to 256 components and is truncated or
            cycled as needed for other targets.

    Returns:
        (GmmParams, info) where info holds per-stage component counts and
        log-likelihood traces.
    """
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 2 or frames.shape[0] == 0:
        raise ValueError("train_split: empty data")
    if n_components < 1 or (n_components & (n_components - 1)) != 0:
        raise ValueError("n_components must be a power of two")
    n_stages = int(np.log2(n_components)) + 1
    iters = list(stage_iters)
    while len(iters) < n_stages:
        iters.append(iters[-1])

    # Stage 1 ML solution is the closed-form single Gaussian.
    mean = frames.mean(axis=0, keepdims=True)
    var = np.maximum(frames.var(axis=0, keepdims=True), VARIANCE_FLOOR)
    params = GmmParams(np.ones(1), mean, var)
    info = {"stage_components": [1], "ll_traces": []}
    params, hist = _em_iterate(frames, params, iters[0])
    info["ll_traces"].append(hist)
    for stage in range(1, n_stages):
        params = _split(params)
        params, hist = _em_iterate(frames, params, iters[stage])
        info["stage_components"].append(params.n_components)
        info["ll_traces"].append(hist)
    return params, info


def dominance_terms(y, params, q_z):
    """Expected per-bin log-density and log-CDF under component posteriors.

    Args:
        y: observed log-magnitudes, (T, F)
        q_z: per-frame component posteriors, (T, C) simplex rows

    Returns:
        (e_log_n, e_log_phi), each (T, F):
            e_log_n[t, f] = sum_c q_z[t, c] ln N(y; mu_cf, var_cf)
            e_log_phi[t, f] = sum_c q_z[t, c] ln Phi(y; mu_cf, var_cf)
    """
    y = np.asarray(y, dtype=np.float64)
    q = np.asarray(q_z, dtype=np.float64)
    inv_var = 1.0 / params.variances  # (C, F)
    # ln N factorizes in y, so the expectation is three matmuls.
    e_log_n = -0.5 * (
        (y**2) * (q @ inv_var)
        - 2.0 * y * (q @ (params.means * inv_var))
        + q @ (params.means**2 * inv_var)
        + q @ (np.log(params.variances) + _LOG_2PI)
    )
    # ln Phi does not factorize; evaluate per component (chunk over frames
    # to bound the (T, C, F) temporary).
    sigma = np.sqrt(params.variances)  # (C, F)
    e_log_phi = np.empty_like(y)
    chunk = max(1, int(2e6) // (params.n_components * params.n_bins))
    for start in range(0, y.shape[0], chunk):
        stop = min(start + chunk, y.shape[0])
        a = (y[start:stop, None, :] - params.means[None, :, :]) / sigma[None, :, :]
        lphi = _kernels.log_ndtr(a)  # (t, C, F)
        e_log_phi[start:stop] = np.einsum("tc,tcf->tf", q[start:stop], lphi)
    return e_log_n, e_log_phi
