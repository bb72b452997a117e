"""Time-frequency analysis/synthesis and spatial feature extraction.

Shape conventions used throughout the package:
    M: microphones / channels
    T: time frames
    F: frequency bins (= window_len // 2 + 1)
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.io.wavfile

MAGNITUDE_FLOOR = 1e-7  # of full scale, applied before the log


@dataclass(frozen=True)
class StftConfig:
    """Analysis/synthesis geometry. Defaults: 64 ms window, 16 ms shift at 8 kHz."""

    window_len: int = 512
    hop: int = 128
    window: str = "hann"
    sample_rate: int = 8000

    def __post_init__(self):
        if self.window != "hann":
            raise ValueError(f"unsupported window {self.window!r}")
        if self.window_len % 2 != 0:
            raise ValueError("window_len must be even")
        if not 0 < self.hop <= self.window_len:
            raise ValueError("hop must satisfy 0 < hop <= window_len")

    @property
    def n_bins(self):
        return self.window_len // 2 + 1

    def analysis_window(self):
        # Periodic Hann: sum of squared overlapped copies is constant for
        # hop dividing window_len, which the overlap-add synthesis relies on.
        n = np.arange(self.window_len)
        return 0.5 * (1.0 - np.cos(2.0 * np.pi * n / self.window_len))


@dataclass
class ComplexSpectrogram:
    """STFT coefficients of a multi-channel signal, shape (M, T, F)."""

    data: np.ndarray
    config: StftConfig

    @property
    def n_channels(self):
        return self.data.shape[0]

    @property
    def n_frames(self):
        return self.data.shape[1]

    @property
    def n_bins(self):
        return self.data.shape[2]


@dataclass
class LogMagSpectrogram:
    """Natural-log magnitudes of a single channel, shape (T, F)."""

    data: np.ndarray


@dataclass
class SpatialFeatures:
    """Unit-norm observation vectors per (t, f), shape (T, F, M).

    ``degenerate`` flags bins whose observation vector had zero norm
    (mapped to e1); downstream estimators exclude them from statistics.
    """

    data: np.ndarray
    degenerate: np.ndarray = field(default=None)


def num_frames(n_samples, cfg):
    return 1 + (n_samples - cfg.window_len) // cfg.hop


def stft(signal, cfg=StftConfig()):
    """Multi-channel STFT.

    Args:
        signal: real samples, shape (M, L) or (L,)
        cfg: StftConfig

    Returns:
        ComplexSpectrogram with data shape (M, T, F),
        T = 1 + floor((L - window_len) / hop).
    """
    x = np.atleast_2d(np.asarray(signal, dtype=np.float64))
    n_samples = x.shape[1]
    if n_samples < cfg.window_len:
        raise ValueError(
            f"signal too short: {n_samples} samples < one window "
            f"({cfg.window_len})"
        )
    t_frames = num_frames(n_samples, cfg)
    win = cfg.analysis_window()
    # Frame view (M, T, window_len); every frame lies fully inside the signal.
    idx = cfg.hop * np.arange(t_frames)[:, None] + np.arange(cfg.window_len)[None, :]
    frames = x[:, idx] * win[None, None, :]
    return ComplexSpectrogram(np.fft.rfft(frames, axis=-1), cfg)


def istft(spec, cfg=None):
    """Overlap-add synthesis of a single-channel spectrogram.

    Uses the analysis window for synthesis with sum-of-squared-windows
    normalization, so interior samples of istft(stft(x)) equal x.

    Args:
        spec: ComplexSpectrogram with a single channel (or one of shape
              (T, F) raw array plus an explicit cfg)

    Returns:
        real samples, shape (L,), L = (T - 1) * hop + window_len
    """
    if isinstance(spec, ComplexSpectrogram):
        cfg = spec.config if cfg is None else cfg
        data = spec.data
        if data.ndim == 3:
            if data.shape[0] != 1:
                raise ValueError("istft expects a single channel")
            data = data[0]
    else:
        if cfg is None:
            raise ValueError("istft of a raw array requires cfg")
        data = np.asarray(spec)
    if data.shape[1] != cfg.n_bins:
        raise ValueError(
            f"geometry mismatch: {data.shape[1]} bins for window_len "
            f"{cfg.window_len} (expected {cfg.n_bins})"
        )
    t_frames = data.shape[0]
    win = cfg.analysis_window()
    frames = np.fft.irfft(data, n=cfg.window_len, axis=-1) * win[None, :]
    n_samples = (t_frames - 1) * cfg.hop + cfg.window_len
    out = np.zeros(n_samples)
    norm = np.zeros(n_samples)
    for t in range(t_frames):
        start = t * cfg.hop
        out[start : start + cfg.window_len] += frames[t]
        norm[start : start + cfg.window_len] += win * win
    # Edge samples have vanishing window-sum; flooring it fades them out
    # instead of amplifying frame leakage (interior samples are untouched).
    return out / np.maximum(norm, 0.1 * norm.max())


def log_magnitude(spec, channel=0, floor=MAGNITUDE_FLOOR):
    """Floored log-magnitude of one channel, shape (T, F)."""
    if channel >= spec.n_channels:
        raise ValueError(f"channel {channel} out of range (M={spec.n_channels})")
    mag = np.abs(spec.data[channel])
    return LogMagSpectrogram(np.log(np.maximum(mag, floor)))


def spatial_features(spec):
    """Unit-normalized observation vectors psi_{t,f} = Y_{t,f} / ||Y_{t,f}||.

    Zero-norm bins (silence across all microphones) are mapped to e1 and
    flagged as degenerate.
    """
    if spec.n_channels < 2:
        raise ValueError("spatial features require at least 2 channels")
    vec = np.ascontiguousarray(spec.data.transpose(1, 2, 0))  # (T, F, M)
    norm = np.linalg.norm(vec, axis=-1)
    degenerate = norm == 0.0
    safe = np.where(degenerate, 1.0, norm)
    psi = vec / safe[:, :, None]
    if degenerate.any():
        e1 = np.zeros(spec.n_channels, dtype=psi.dtype)
        e1[0] = 1.0
        psi[degenerate] = e1
    return SpatialFeatures(psi, degenerate)


def read_wav(path, expect_sr=None, allow_sr_mismatch=False):
    """Read a RIFF WAV file (PCM16 or IEEE float32).

    Returns:
        (data, sample_rate); data shape (M, L) float64, PCM scaled to
        [-1, 1).
    """
    sr, data = scipy.io.wavfile.read(path)
    if expect_sr is not None and sr != expect_sr and not allow_sr_mismatch:
        raise ValueError(
            f"{path}: sample rate {sr} != expected {expect_sr} "
            "(pass --allow-sr-mismatch to override)"
        )
    if data.dtype == np.int16:
        data = data.astype(np.float64) / 32768.0
    elif data.dtype == np.int32:
        data = data.astype(np.float64) / 2147483648.0
    else:
        data = data.astype(np.float64)
    if data.ndim == 1:
        data = data[None, :]
    else:
        data = data.T
    return np.ascontiguousarray(data), sr


def write_wav(path, data, sample_rate, pcm16=False):
    """Write (M, L) or (L,) samples as float32 (default) or PCM16 WAV."""
    x = np.atleast_2d(np.asarray(data))
    out = x.T if x.shape[0] > 1 else x[0]
    if pcm16:
        clipped = np.clip(out, -1.0, 32767.0 / 32768.0)
        scipy.io.wavfile.write(path, sample_rate, (clipped * 32768.0).astype(np.int16))
    else:
        scipy.io.wavfile.write(path, sample_rate, out.astype(np.float32))
