"""Variational autoencoder spectral model of single-speaker log-magnitude
speech with a speaker-disentangled latent block.

Latent layout: z = [u, v]; u has a standard-normal prior, v a unit-variance
Gaussian prior centered on a learned per-speaker mean. The encoder/decoder
are 1-d conv stacks over time (kernel 3, strides 1-1-2-1-1) followed by
per-frame feed-forward layers; layers that keep shape carry residual
connections. Time resolution is halved once by the stride-2 layer;
per-frame posteriors are restored to full rate by frame repetition, and
``decode`` pools frame pairs back before its transposed stack.
"""

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as nt

SIGMA_X_FLOOR = 1e-3
_LOG_SIGMA_X_FLOOR = math.log(SIGMA_X_FLOOR)
# Numeric guards on the variance heads; generous enough never to bind on
# trained models, they only keep exp() finite at initialization.
_LOG_SIGMA_X_CEIL = 8.0
_LOG_SIGMA_Z_RANGE = (-6.0, 3.0)

CONV_STRIDES = (1, 1, 2, 1, 1)
N_FF = 4
KERNEL = 3


@dataclass(frozen=True)
class VaeDims:
    input_dim: int = 257
    hidden: int = 128  # paper-scale value is 512; desk-scale default
    dim_u: int = 20
    dim_v: int = 20

    @property
    def dim_z(self):
        return self.dim_u + self.dim_v


@dataclass
class VaeParams:
    """Encoder/decoder weights plus learned per-speaker latent means."""

    params: dict
    speaker_means: nt.Tensor
    dims: VaeDims

    @property
    def n_speakers(self):
        return self.speaker_means.shape[0]

    def all_tensors(self):
        out = dict(self.params)
        out["speaker_means"] = self.speaker_means
        return out

    def save(self, path):
        blob = {name: t.data for name, t in self.all_tensors().items()}
        d = self.dims
        blob["meta/dims"] = np.array(
            [d.input_dim, d.hidden, d.dim_u, d.dim_v], dtype=np.float32
        )
        nt.save_tensors(path, blob)

    @classmethod
    def load(cls, path):
        blob = nt.load_tensors(path)
        meta = blob.pop("meta/dims").astype(int)
        dims = VaeDims(*meta)
        spk = nt.tensor(blob.pop("speaker_means"), requires_grad=True)
        params = {k: nt.tensor(v, requires_grad=True) for k, v in blob.items()}
        return cls(params, spk, dims)


@dataclass
class LatentPosterior:
    """Per-frame Gaussian posterior parameters, each (T, dim_z)."""

    mu: np.ndarray
    log_sigma: np.ndarray


@dataclass
class DecodedGaussian:
    """Per-frame observation Gaussian, each (T, F); sigma is a std dev."""

    mu_x: np.ndarray
    log_sigma_x: np.ndarray


@dataclass
class TrainConfig:
    epochs: int = 100
    lr: float = 1e-4
    clip_norm: float = 10.0
    kl_weight: float = 1.0
    seed: int = 0
    log_path: str = None
    dims: VaeDims = field(default_factory=VaeDims)


def init_params(dims=VaeDims(), n_speakers=2, seed=0):
    """He-style initialization of all weights; deterministic per seed."""
    rng = np.random.default_rng(seed)
    params = {}

    def conv_w(name, c_out, c_in):
        params[f"{name}/w"] = nt.tensor(
            rng.normal(size=(c_out, c_in, KERNEL)) * np.sqrt(2.0 / (c_in * KERNEL)),
            requires_grad=True,
        )
        params[f"{name}/b"] = nt.tensor(np.zeros(c_out), requires_grad=True)

    def tconv_w(name, c_in, c_out):
        params[f"{name}/w"] = nt.tensor(
            rng.normal(size=(c_in, c_out, KERNEL)) * np.sqrt(2.0 / (c_in * KERNEL)),
            requires_grad=True,
        )
        params[f"{name}/b"] = nt.tensor(np.zeros(c_out), requires_grad=True)

    def ff_w(name, d_out, d_in, gain=2.0):
        params[f"{name}/w"] = nt.tensor(
            rng.normal(size=(d_out, d_in)) * np.sqrt(gain / d_in), requires_grad=True
        )
        params[f"{name}/b"] = nt.tensor(np.zeros(d_out), requires_grad=True)

    h = dims.hidden
    conv_w("enc/conv0", h, dims.input_dim)
    for i in range(1, 5):
        conv_w(f"enc/conv{i}", h, h)
    for i in range(N_FF):
        ff_w(f"enc/ff{i}", h, h)
    # Small head gain keeps initial posteriors near the prior.
    ff_w("enc/head", 2 * dims.dim_z, h, gain=1e-3)

    tconv_w("dec/tconv0", dims.dim_z, h)
    for i in range(1, 5):
        tconv_w(f"dec/tconv{i}", h, h)
    for i in range(N_FF):
        ff_w(f"dec/ff{i}", h, h)
    ff_w("dec/head", 2 * dims.input_dim, h, gain=1e-3)

    # Unit-scale speaker means: far enough apart that the distance softmax
    # is informative from the start (the KL term then organizes each
    # speaker's v-posteriors around its mean).
    spk = nt.tensor(rng.normal(size=(n_speakers, dims.dim_v)), requires_grad=True)
    return VaeParams(params, spk, dims)


def _conv_stack(vp, prefix, x, transposed):
    """Five conv (or transposed-conv) layers, ReLU, residual where shape
    is preserved. x: Tensor (C, T)."""
    h = x
    for i, stride in enumerate(CONV_STRIDES):
        w = vp.params[f"{prefix}{i}/w"]
        b = vp.params[f"{prefix}{i}/b"]
        if transposed:
            y = nt.relu(nt.transposed_conv1d(h, w, bias=b, stride=stride))
        else:
            y = nt.relu(nt.conv1d(h, w, bias=b, stride=stride))
        if stride == 1 and y.shape == h.shape:
            y = nt.add(y, h)
        h = y
    return h


def _bias_add(x, b):
    """(C, T) + (C,) bias via a (C, 1) broadcast view of the parameter."""
    return nt.add(x, nt.reshape(b, (b.shape[0], 1)))


def _ff_stack(vp, prefix, h):
    """Per-frame dense layers with ReLU and residual connections."""
    for i in range(N_FF):
        w = vp.params[f"{prefix}/ff{i}/w"]
        b = vp.params[f"{prefix}/ff{i}/b"]
        h = nt.add(nt.relu(_bias_add(nt.matmul(w, h), b)), h)
    return h


def encode_graph(vp, x_ct):
    """Encoder on a (F, T) tensor; returns (mu, log_sigma) each (dim_z, T)
    at full frame rate (repetition-upsampled across the stride-2 layer)."""
    t_full = x_ct.shape[1]
    h = _conv_stack(vp, "enc/conv", x_ct, transposed=False)
    h = _ff_stack(vp, "enc", h)
    head = _bias_add(nt.matmul(vp.params["enc/head/w"], h), vp.params["enc/head/b"])
    dz = vp.dims.dim_z
    mu = nt.repeat_pairs(nt.crop(head, 0, 0, dz), t_full, axis=1)
    log_sigma = nt.repeat_pairs(
        nt.clamp(nt.crop(head, 0, dz, 2 * dz), *_LOG_SIGMA_Z_RANGE), t_full, axis=1
    )
    return mu, log_sigma


def decode_graph(vp, z_ct):
    """Decoder on a (dim_z, T) tensor; returns (mu_x, log_sigma_x) each
    (F, T). Frame pairs are mean-pooled to half rate before the transposed
    stack (exact inverse of the encoder's repetition upsampling) and the
    output is cropped back to T."""
    t_full = z_ct.shape[1]
    h = nt.avg_pool_pairs(z_ct, axis=1)
    h = _conv_stack(vp, "dec/tconv", h, transposed=True)
    h = nt.crop(h, 1, 0, t_full)
    h = _ff_stack(vp, "dec", h)
    head = _bias_add(nt.matmul(vp.params["dec/head/w"], h), vp.params["dec/head/b"])
    f_dim = vp.dims.input_dim
    mu_x = nt.crop(head, 0, 0, f_dim)
    log_sigma_x = nt.clamp(
        nt.crop(head, 0, f_dim, 2 * f_dim), _LOG_SIGMA_X_FLOOR, _LOG_SIGMA_X_CEIL
    )
    return mu_x, log_sigma_x


def _latent_from_graph(mu_t, ls_t):
    return LatentPosterior(
        np.array(mu_t.data.T, dtype=np.float64),
        np.array(ls_t.data.T, dtype=np.float64),
    )


def encode(x, vp):
    """Posterior parameters for a (T, F) log-magnitude array."""
    x = np.asarray(getattr(x, "data", x))
    if x.shape[1] != vp.dims.input_dim:
        raise ValueError(
            f"encode: input width {x.shape[1]} != model input_dim "
            f"{vp.dims.input_dim}"
        )
    mu, ls = encode_graph(vp, nt.tensor(x.T))
    return _latent_from_graph(mu, ls)


def decode(z, vp):
    """Observation Gaussian for latent samples z of shape (T, dim_z)."""
    z = np.asarray(z)
    if z.ndim != 2 or z.shape[1] != vp.dims.dim_z:
        raise ValueError(
            f"decode: latent width {z.shape[1] if z.ndim == 2 else z.shape} "
            f"!= {vp.dims.dim_z}"
        )
    mu_x, ls_x = decode_graph(vp, nt.tensor(z.T))
    return DecodedGaussian(
        np.array(mu_x.data.T, dtype=np.float64),
        np.array(ls_x.data.T, dtype=np.float64),
    )


def kl_terms(mu, log_sigma, prior_mu):
    """Closed-form KL(N(mu, sigma^2) || N(prior_mu, 1)), elementwise tensors."""
    var = nt.exp(nt.mul(log_sigma, nt.tensor(np.array(2.0))))
    diff = nt.sub(mu, prior_mu)
    inner = nt.add(var, nt.mul(diff, diff))
    return nt.sub(
        nt.mul(nt.sub(inner, nt.tensor(np.array(1.0))), nt.tensor(np.array(0.5))),
        log_sigma,
    )


def loss(x, speaker_id, vp, rng, kl_weight=1.0):
    """Training objective for one utterance: reconstruction + KL + speaker
    classification. Returns (scalar loss Tensor to minimize, stats dict);
    the maximized objective is -loss."""
    x = np.asarray(getattr(x, "data", x))
    if x.shape[1] != vp.dims.input_dim:
        raise ValueError(f"loss: input width {x.shape[1]} != {vp.dims.input_dim}")
    if not 0 <= speaker_id < vp.n_speakers:
        raise ValueError(f"unknown speaker id {speaker_id}")
    dims = vp.dims
    xt = nt.tensor(x.T)

    mu, log_sigma = encode_graph(vp, xt)
    eps = rng.standard_normal(mu.shape).astype(mu.dtype)
    z = nt.add(mu, nt.mul(nt.exp(log_sigma), nt.tensor(eps)))
    mu_x, log_sigma_x = decode_graph(vp, z)
    recon_nll = nt.reduce_sum(nt.gaussian_nll(xt, mu_x, log_sigma_x))

    mu_u = nt.crop(mu, 0, 0, dims.dim_u)
    ls_u = nt.crop(log_sigma, 0, 0, dims.dim_u)
    mu_v = nt.crop(mu, 0, dims.dim_u, dims.dim_z)
    ls_v = nt.crop(log_sigma, 0, dims.dim_u, dims.dim_z)
    spk_mean_row = nt.crop(vp.speaker_means, 0, speaker_id, speaker_id + 1)
    kl = nt.add(
        nt.reduce_sum(kl_terms(mu_u, ls_u, nt.tensor(np.array(0.0)))),
        nt.reduce_sum(kl_terms(mu_v, ls_v, nt.transpose2d(spk_mean_row))),
    )

    # Speaker classifier: softmax over negative squared distances between the
    # utterance-level mean of the v-posterior and every speaker mean.
    v_bar = nt.reduce_mean(mu_v, axis=1)
    dist = nt.sub(vp.speaker_means, v_bar)
    logits = nt.neg(nt.reduce_sum(nt.mul(dist, dist), axis=1))
    spk_nll = nt.softmax_cross_entropy(logits, speaker_id)

    total = nt.add(
        nt.add(recon_nll, nt.mul(kl, nt.tensor(np.array(kl_weight)))), spk_nll
    )
    stats = {
        "recon_nll": float(recon_nll.data),
        "kl": float(kl.data),
        "spk_loss": float(spk_nll.data),
        "elbo": float(-recon_nll.data - kl.data),
    }
    return total, stats


def train(dataset, cfg=TrainConfig(), n_speakers=None, params=None):
    """Train on a list of (logmag (T, F) array, speaker_id) pairs.

    Returns (VaeParams, per-epoch log list). The log rows carry the epoch
    mean elbo / kl / spk_loss; cfg.log_path (optional) receives them as CSV.
    """
    if not dataset:
        raise ValueError("train: empty dataset")
    if n_speakers is None:
        n_speakers = max(s for _, s in dataset) + 1
    if params is None:
        params = init_params(cfg.dims, n_speakers=n_speakers, seed=cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    opt = nt.Adam(params.all_tensors(), lr=cfg.lr, clip_norm=cfg.clip_norm)
    log = []
    order = np.arange(len(dataset))
    for epoch in range(cfg.epochs):
        rng.shuffle(order)
        acc = {"elbo": 0.0, "kl": 0.0, "spk_loss": 0.0}
        for idx in order:
            x, spk = dataset[idx]
            total, stats = loss(x, spk, params, rng, kl_weight=cfg.kl_weight)
            opt.zero_grad()
            nt.backward(total)
            opt.step()
            for key in acc:
                acc[key] += stats[key]
        row = {"epoch": epoch}
        row.update({k: v / len(dataset) for k, v in acc.items()})
        log.append(row)
    if cfg.log_path:
        with open(cfg.log_path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=["epoch", "elbo", "kl", "spk_loss"])
            writer.writeheader()
            for row in log:
                writer.writerow(row)
    return params, log


def classify_speaker(x, vp):
    """Most likely training speaker for a (T, F) log-magnitude array."""
    post = encode(x, vp)
    v_bar = post.mu[:, vp.dims.dim_u :].mean(axis=0)
    d2 = ((vp.speaker_means.data - v_bar) ** 2).sum(axis=1)
    return int(np.argmin(d2))
