"""Synthetic desk-scale scene generation: speech-like harmonic sources,
image-source room impulse responses, spherically isotropic diffuse noise,
and SNR-controlled mixing. Everything is deterministic per seed.
"""

import json
from dataclasses import dataclass, field, asdict

import numpy as np
import scipy.signal

SPEED_OF_SOUND = 343.0
FRAC_DELAY_TAPS = 32

NOISE_SNR_BANDS = {
    "15-20": (15.0, 20.0),
    "10-15": (10.0, 15.0),
    "5-10": (5.0, 10.0),
    "0-5": (0.0, 5.0),
    "-5-0": (-5.0, 0.0),
}


@dataclass
class SceneSpec:
    """Geometry and level description of one 2-speaker + noise scene."""

    room: tuple = (4.0, 3.2, 2.6)
    t60: float = 0.0
    mic_positions: tuple = ()
    source_positions: tuple = ()
    sir_range: tuple = (-5.0, 5.0)
    noise_band: str = "15-20"
    sample_rate: int = 8000
    duration: float = 2.5
    seed: int = 0

    def __post_init__(self):
        room = np.asarray(self.room, dtype=float)
        if not (0.0 <= self.t60 < 1.0):
            raise ValueError(f"t60 {self.t60} outside [0, 1)")
        for name, pts in (("mic", self.mic_positions), ("source", self.source_positions)):
            for p in np.atleast_2d(np.asarray(pts, dtype=float)):
                if len(pts) and (np.any(p <= 0.0) or np.any(p >= room)):
                    raise ValueError(f"{name} position {p} outside room {room}")
        if self.noise_band not in NOISE_SNR_BANDS:
            raise ValueError(f"unknown noise band {self.noise_band!r}")


def random_scene(seed, noise_band="15-20", t60=0.0, n_mics=4, sample_rate=8000,
                 duration=2.5):
    """Randomized circular-array scene in the style of the synthetic corpus:
    array diameter 15-25 cm at the room center, two sources ~1.3 m away."""
    rng = np.random.default_rng(seed)
    room = np.array([4.0, 3.2, 2.6]) + rng.uniform(0.0, 1.0, size=3)
    center = room / 2.0
    radius = rng.uniform(0.075, 0.125)
    angles = 2.0 * np.pi * np.arange(n_mics) / n_mics + rng.uniform(0, 2 * np.pi)
    mics = center + radius * np.stack(
        [np.cos(angles), np.sin(angles), np.zeros(n_mics)], axis=1
    )
    src_angles = rng.uniform(0, 2 * np.pi) + np.array(
        [0.0, rng.uniform(np.pi / 3, np.pi)]
    )
    dists = np.clip(rng.normal(1.3, 0.4, size=2), 0.6, 1.6)
    sources = center + np.stack(
        [
            dists * np.cos(src_angles),
            dists * np.sin(src_angles),
            rng.uniform(-0.3, 0.3, size=2),
        ],
        axis=1,
    )
    sources = np.clip(sources, 0.2, room - 0.2)
    return SceneSpec(
        room=tuple(room),
        t60=t60,
        mic_positions=tuple(map(tuple, mics)),
        source_positions=tuple(map(tuple, sources)),
        noise_band=noise_band,
        sample_rate=sample_rate,
        duration=duration,
        seed=seed,
    )


# ---------------------------------------------------------------------------
# Sources
# ---------------------------------------------------------------------------


def harmonic_source(f0, duration, sample_rate=8000, seed=0, tilt=None,
                    breath_level=0.12):
    """Speech-like deterministic test signal.

    A sum of decaying harmonics of a drifting fundamental (slow random-walk
    glide plus vibrato), shaped by a syllabic burst/pause envelope, with a
    low-level broadband 'breath' floor so voiced frames carry energy across
    the band. Deterministic per (f0, seed).
    """
    if not 60.0 < f0 < 400.0:
        raise ValueError(f"f0 {f0} outside (60, 400) Hz")
    rng = np.random.default_rng(seed)
    n = int(round(duration * sample_rate))
    t = np.arange(n) / sample_rate

    # Fundamental trajectory: +-0.3 octave random walk + 5 Hz vibrato.
    n_ctrl = max(int(duration * 25), 4)
    walk = rng.standard_normal(n_ctrl).cumsum()
    walk = walk / max(np.abs(walk).max(), 1.0) * 0.3
    glide = np.interp(np.linspace(0, 1, n), np.linspace(0, 1, n_ctrl), walk)
    f0_t = f0 * 2.0 ** (glide + 0.03 * np.sin(2 * np.pi * 5.0 * t))
    phase = 2.0 * np.pi * np.cumsum(f0_t) / sample_rate

    # Syllabic envelope: hanning bursts separated by near-silence.
    env = np.zeros(n)
    pos = 0
    while pos < n:
        burst = int(rng.uniform(0.12, 0.35) * sample_rate)
        gap = int(rng.uniform(0.05, 0.18) * sample_rate)
        seg = min(burst, n - pos)
        if seg > 8:
            env[pos : pos + seg] = np.hanning(seg) * rng.uniform(0.5, 1.0)
        pos += burst + gap

    if tilt is None:
        tilt = rng.uniform(0.1, 0.2)
    n_harm = int(0.95 * (sample_rate / 2) / f0)
    sig = np.zeros(n)
    for k in range(1, n_harm + 1):
        sig += np.exp(-tilt * k) * np.sin(k * phase)
    sig *= env

    # Breath floor: spectrally tilted noise under the same envelope.
    spec = np.fft.rfft(rng.standard_normal(n))
    freqs = np.fft.rfftfreq(n, 1.0 / sample_rate)
    spec *= np.exp(-freqs / 2500.0)
    breath = np.fft.irfft(spec, n)
    breath *= breath_level * np.std(sig) / max(np.std(breath), 1e-12)
    sig = sig + breath * env
    peak = np.abs(sig).max()
    return sig / (peak * 1.25) if peak > 0 else sig


# ---------------------------------------------------------------------------
# Room impulse responses
# ---------------------------------------------------------------------------


def _frac_delay_kernel(delay_samples, n_taps=FRAC_DELAY_TAPS):
    """Windowed-sinc fractional delay: returns (offset, taps)."""
    center = int(np.floor(delay_samples))
    frac = delay_samples - center
    n = np.arange(-n_taps // 2, n_taps // 2 + 1)
    x = n - frac
    taps = np.sinc(x) * np.hanning(len(n))
    return center + n[0], taps


def generate_rir(spec):
    """Image-source room impulse responses, (n_sources, M, taps).

    t60 = 0 yields the pure direct path (fractional delay + 1/(4 pi d)
    attentuation). Reflection coefficients come from a uniform absorption
    matched to t60 (Eyring); image order covers the t60 decay range.
    """
    room = np.asarray(spec.room, dtype=float)
    mics = np.atleast_2d(np.asarray(spec.mic_positions, dtype=float))
    sources = np.atleast_2d(np.asarray(spec.source_positions, dtype=float))
    fs = spec.sample_rate
    c = SPEED_OF_SOUND

    if spec.t60 <= 0.0:
        length = int(np.ceil(np.linalg.norm(room) / c * fs)) + FRAC_DELAY_TAPS + 2
        h = np.zeros((len(sources), len(mics), length))
        for i, src in enumerate(sources):
            for m, mic in enumerate(mics):
                d = np.linalg.norm(src - mic)
                offset, taps = _frac_delay_kernel(d / c * fs)
                lo = max(offset, 0)
                hi = min(offset + len(taps), length)
                h[i, m, lo:hi] += taps[lo - offset : hi - offset] / (4 * np.pi * d)
        return h

    volume = float(np.prod(room))
    surface = 2.0 * (room[0] * room[1] + room[0] * room[2] + room[1] * room[2])
    alpha = 1.0 - np.exp(-0.161 * volume / (surface * spec.t60))
    beta = np.sqrt(np.clip(1.0 - alpha, 1e-4, 1.0))

    rir_len_s = spec.t60 * 1.1 + float(np.linalg.norm(room)) / c
    length = int(np.ceil(rir_len_s * fs)) + FRAC_DELAY_TAPS + 2
    order = np.ceil(rir_len_s * c / (2.0 * room)).astype(int)

    # All image positions: reflections r per axis, mirror parities p.
    axes = [np.arange(-order[d], order[d] + 1) for d in range(3)]
    r_grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
    parities = np.stack(
        np.meshgrid([0, 1], [0, 1], [0, 1], indexing="ij"), axis=-1
    ).reshape(-1, 3)

    h = np.zeros((len(sources), len(mics), length))
    kernel_idx = np.arange(-FRAC_DELAY_TAPS // 2, FRAC_DELAY_TAPS // 2 + 1)
    window = np.hanning(len(kernel_idx))
    for i, src in enumerate(sources):
        for p in parities:
            base = (1 - 2 * p) * src + 2.0 * r_grid * room  # (N_img, 3)
            refl = beta ** (
                np.abs(r_grid + p).sum(axis=1) + np.abs(r_grid).sum(axis=1)
            )
            for m, mic in enumerate(mics):
                d = np.linalg.norm(base - mic, axis=1)
                delay = d / c * fs
                keep = delay < length - FRAC_DELAY_TAPS - 1
                if not np.any(keep):
                    continue
                dk, ak = delay[keep], (refl[keep] / (4 * np.pi * d[keep]))
                center = np.floor(dk).astype(int)
                frac = dk - center
                taps = np.sinc(kernel_idx[None, :] - frac[:, None]) * window[None, :]
                positions = center[:, None] + kernel_idx[None, :]
                valid = (positions >= 0) & (positions < length)
                np.add.at(
                    h[i, m],
                    positions[valid],
                    (ak[:, None] * taps)[valid],
                )
    return h


# ---------------------------------------------------------------------------
# Diffuse noise
# ---------------------------------------------------------------------------


def diffuse_noise(n_channels, n_samples, spec, n_directions=64):
    """Spherically isotropic noise, (M, L).

    Superposes white Gaussian plane waves from uniformly random directions;
    each arrives at every microphone with the corresponding geometric delay
    (frequency-domain phase shifts), producing the sinc-like inter-channel
    coherence of an isotropic field.
    """
    rng = np.random.default_rng(spec.seed + 90001)
    mics = np.atleast_2d(np.asarray(spec.mic_positions, dtype=float))[:n_channels]
    center = mics.mean(axis=0)
    fs = spec.sample_rate

    # Uniform directions on the sphere.
    u = rng.standard_normal((n_directions, 3))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    delays = (mics - center) @ u.T / SPEED_OF_SOUND  # (M, J) seconds

    n_fft = int(2 ** np.ceil(np.log2(n_samples + 1)))
    freqs = np.fft.rfftfreq(n_fft, 1.0 / fs)
    spectra = rng.standard_normal((n_directions, len(freqs))) + 1j * rng.standard_normal(
        (n_directions, len(freqs))
    )
    phase = np.exp(-2j * np.pi * freqs[None, None, :] * delays[:, :, None])
    out = np.fft.irfft(
        np.einsum("jf,mjf->mf", spectra, phase), n=n_fft, axis=-1
    )[:, :n_samples]
    out /= np.sqrt(np.mean(out**2))
    return out


# ---------------------------------------------------------------------------
# Mixing
# ---------------------------------------------------------------------------


def mix_scene(sources, spec, rirs=None):
    """Spatialize, scale, and mix dry sources with diffuse noise.

    Args:
        sources: list of dry signals (L,); the first is the level reference
        spec: SceneSpec; speaker-to-speaker SNR is drawn from
            spec.sir_range and the noise SNR from spec.noise_band, both
            with spec.seed

    Returns:
        dict with mixture (M, L), refs [per source (M, L), post-scaling],
        noise (M, L), and the drawn levels.
    """
    if len(sources) == 0:
        raise ValueError("mix_scene: need at least one source")
    for i, s in enumerate(sources):
        if not np.any(np.asarray(s) != 0.0):
            raise ValueError(f"mix_scene: source {i} is silent")
    rng = np.random.default_rng(spec.seed + 70007)
    if rirs is None:
        rirs = generate_rir(spec)
    n_mics = rirs.shape[1]
    length = min(len(s) for s in sources)

    refs = []
    for i, dry in enumerate(sources):
        conv = np.stack(
            [scipy.signal.fftconvolve(dry[:length], rirs[i, m])[:length]
             for m in range(n_mics)]
        )
        refs.append(conv)

    # Speaker-to-speaker SNR measured at the reference channel 0.
    sir_db = float(rng.uniform(*spec.sir_range)) if len(refs) > 1 else 0.0
    if len(refs) > 1:
        p0 = np.mean(refs[0][0] ** 2)
        p1 = np.mean(refs[1][0] ** 2)
        gain = np.sqrt(p0 / (p1 * 10.0 ** (sir_db / 10.0)))
        refs[1] = refs[1] * gain

    speech = np.sum(refs, axis=0)
    lo, hi = NOISE_SNR_BANDS[spec.noise_band]
    snr_db = float(rng.uniform(lo, hi))
    noise = diffuse_noise(n_mics, length, spec)
    p_speech = np.mean(speech**2)
    p_noise = np.mean(noise**2)
    noise = noise * np.sqrt(p_speech / (p_noise * 10.0 ** (snr_db / 10.0)))
    mixture = speech + noise
    return {
        "mixture": mixture,
        "refs": refs,
        "noise": noise,
        "sir_db": sir_db,
        "noise_snr_db": snr_db,
    }


# ---------------------------------------------------------------------------
# Manifests
# ---------------------------------------------------------------------------


def write_manifest(path, records):
    """JSON-lines scene manifest."""
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec) + "\n")


def read_manifest(path):
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def scene_record(spec, paths, levels):
    rec = asdict(spec)
    rec.update(paths)
    rec.update(levels)
    return rec
