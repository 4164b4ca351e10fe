"""
Synthetic convolutive mixtures with controlled SNR and SINR.

Sources are convolved with random exponentially decaying FIR filters, one per
(microphone, source) pair. Target images are normalized to unit power at the
reference microphone; interferer and white noise powers are then solved from

    SNR  = (1/K) sum_k s_k / noise
    SINR = sum_k s_k / (Q * interferer + noise)

with every power measured at the reference microphone.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.signal import fftconvolve

from .core import InvalidInputError
from .stft import AudioBuffer

SOURCE_KINDS = ("laplacian_noise", "modulated_noise", "wav_files")


@dataclass
class MixtureSpec:
    n_mics: int = 3
    n_targets: int = 2
    n_interferers: int = 10
    filter_length: int = 64
    target_snr: float = 60.0
    target_sinr: float | None = 10.0
    source_kind: str = "modulated_noise"
    seed: int = 0
    duration: float = 20.0
    sample_rate: int = 16000
    wav_files: list = field(default_factory=list)
    ref_mic: int = 0

    def to_dict(self):
        return asdict(self)


@dataclass
class GroundTruth:
    """Everything needed to evaluate a separation of the generated mixture."""

    images: np.ndarray  # (K, T) target images at the reference mic
    sources: np.ndarray  # (K, T) scaled dry target signals
    filters: np.ndarray  # (M, K, L) target-to-mic filters
    interferers: np.ndarray  # (Q, T) scaled dry interferer signals
    interferer_filters: np.ndarray  # (M, Q, L)
    noise: np.ndarray  # (M, T)
    target_power: np.ndarray
    interferer_power: float
    noise_power: float
    realized_snr: float
    realized_sinr: float
    seed: int
    ref_mic: int = 0

    def summary(self):
        return {
            "realized_snr_db": self.realized_snr,
            "realized_sinr_db": self.realized_sinr,
            "target_power": self.target_power.tolist(),
            "interferer_power": self.interferer_power,
            "noise_power": self.noise_power,
            "seed": self.seed,
        }


def db_to_lin(db):
    return 10.0 ** (db / 10.0)


def lin_to_db(x):
    return 10.0 * np.log10(x)


def solve_powers(n_targets: int, n_interferers: int, snr_db: float, sinr_db, target_power=None):
    """
    Interferer (per source) and noise powers meeting the SNR/SINR targets.

    With no interferers the SINR target is not used and the interferer power
    is zero.
    """
    if target_power is None:
        target_power = np.ones(n_targets)
    total = float(np.sum(target_power))
    noise = total / n_targets / db_to_lin(snr_db)
    if n_interferers == 0:
        return 0.0, noise
    if sinr_db is None:
        raise InvalidInputError("target_sinr is required when n_interferers > 0")
    interferer = (total / db_to_lin(sinr_db) - noise) / n_interferers
    if interferer <= 0:
        raise InvalidInputError(
            f"infeasible SNR/SINR: {snr_db} dB SNR leaves no room for "
            f"{n_interferers} interferers at {sinr_db} dB SINR"
        )
    return interferer, noise


def random_filters(rng, n_mics, n_src, length):
    """Gaussian taps under an exponential envelope decaying by 60 dB over ``length``."""
    t = np.arange(length)
    decay = np.exp(-t * np.log(1e3) / max(length, 1))
    h = rng.standard_normal((n_mics, n_src, length)) * decay
    return h


def modulated_noise(rng, n_src, n_samples, sample_rate):
    """
    White Gaussian noise under a piecewise constant random envelope.

    Segments last 50 to 400 ms; about 30% are silent, the others have
    log-normal amplitude. Segment boundaries are smoothed over 10 ms.
    """
    out = np.zeros((n_src, n_samples))
    ramp = max(int(0.01 * sample_rate), 1)
    kernel = np.hanning(2 * ramp + 1)
    kernel /= kernel.sum()
    for k in range(n_src):
        env = np.zeros(n_samples)
        # redraw fully silent envelopes (possible for short signals)
        while not np.any(env):
            pos = 0
            while pos < n_samples:
                seg = max(int(rng.uniform(0.05, 0.4) * sample_rate), 1)
                amp = 0.0 if rng.uniform() < 0.3 else np.exp(rng.normal(0.0, 0.7))
                env[pos:pos + seg] = amp
                pos += seg
        env = np.convolve(env, kernel, mode="same")
        out[k] = env * rng.standard_normal(n_samples)
    return out


def _load_wavs(paths, n_needed, n_samples, sample_rate):
    from scipy.io import wavfile

    if len(paths) < n_needed:
        raise InvalidInputError(f"need {n_needed} wav files, got {len(paths)}")
    out = np.zeros((n_needed, n_samples))
    for i, p in enumerate(paths[:n_needed]):
        fs, data = wavfile.read(p)
        if fs != sample_rate:
            raise InvalidInputError(f"{p}: sample rate {fs} != {sample_rate}")
        data = np.asarray(data, dtype=float)
        if data.ndim > 1:
            data = data[:, 0]
        m = min(len(data), n_samples)
        out[i, :m] = data[:m]
    return out


def _sources(spec, rng, n, n_samples):
    if spec.source_kind == "laplacian_noise":
        return rng.laplace(size=(n, n_samples))
    if spec.source_kind == "modulated_noise":
        return modulated_noise(rng, n, n_samples, spec.sample_rate)
    raise InvalidInputError(f"unknown source kind {spec.source_kind!r}")


def _convolve(filters, signals, n_samples):
    # filters (M, S, L), signals (S, T) -> per-source images (M, S, T)
    return fftconvolve(filters, signals[None], axes=-1)[..., :n_samples]


def _power(x):
    return np.mean(x ** 2, axis=-1)


def validate(spec: MixtureSpec):
    if spec.n_targets < 1 or spec.n_mics < spec.n_targets:
        raise InvalidInputError("need n_mics >= n_targets >= 1")
    if spec.n_interferers < 0:
        raise InvalidInputError("n_interferers must be non-negative")
    if spec.filter_length < 1:
        raise InvalidInputError("filter_length must be at least 1")
    if spec.source_kind not in SOURCE_KINDS:
        raise InvalidInputError(f"unknown source kind {spec.source_kind!r}")
    if spec.n_interferers > 0 and spec.target_sinr is not None and spec.target_snr < spec.target_sinr:
        raise InvalidInputError("SNR must be at least the SINR when interferers are present")
    if not 0 <= spec.ref_mic < spec.n_mics:
        raise InvalidInputError("ref_mic out of range")
    if int(spec.duration * spec.sample_rate) < 1:
        raise InvalidInputError("duration too short")


def generate(spec: MixtureSpec):
    """
    Generate a convolutive mixture and its ground truth.

    Returns
    -------
    (AudioBuffer, GroundTruth)
    """
    validate(spec)
    rng = np.random.default_rng(spec.seed)
    M, K, Q, L = spec.n_mics, spec.n_targets, spec.n_interferers, spec.filter_length
    T = int(round(spec.duration * spec.sample_rate))
    ref = spec.ref_mic

    interf_power, noise_power = solve_powers(K, Q, spec.target_snr, spec.target_sinr)

    if spec.source_kind == "wav_files":
        raw = _load_wavs(spec.wav_files, K + Q, T, spec.sample_rate)
        dry, dry_i = raw[:K], raw[K:]
    else:
        dry = _sources(spec, rng, K, T)
        dry_i = _sources(spec, rng, Q, T)

    h = random_filters(rng, M, K, L)
    g = random_filters(rng, M, Q, L)

    images = _convolve(h, dry, T)
    p = _power(images[ref])
    if np.any(p == 0):
        raise InvalidInputError("a target source is silent at the reference microphone")
    scale = np.sqrt(1.0 / p)
    dry = dry * scale[:, None]
    images = images * scale[None, :, None]

    if Q > 0:
        images_i = _convolve(g, dry_i, T)
        p_i = _power(images_i[ref])
        if np.any(p_i == 0):
            raise InvalidInputError("an interferer is silent at the reference microphone")
        scale_i = np.sqrt(interf_power / p_i)
        dry_i = dry_i * scale_i[:, None]
        images_i = images_i * scale_i[None, :, None]
        interference = images_i.sum(axis=1)
    else:
        interference = np.zeros((M, T))

    noise = rng.standard_normal((M, T))
    noise *= np.sqrt(noise_power / _power(noise))[:, None]

    mix = images.sum(axis=1) + interference + noise

    target_power = _power(images[ref])
    n_ref = _power(noise[ref])
    i_ref = _power(images_i[ref]).sum() if Q > 0 else 0.0
    snr = lin_to_db(target_power.mean() / n_ref)
    sinr = lin_to_db(target_power.sum() / (i_ref + n_ref))

    truth = GroundTruth(
        images=images[ref],
        sources=dry,
        filters=h,
        interferers=dry_i,
        interferer_filters=g,
        noise=noise,
        target_power=target_power,
        interferer_power=float(interf_power),
        noise_power=float(noise_power),
        realized_snr=float(snr),
        realized_sinr=float(sinr),
        seed=spec.seed,
        ref_mic=ref,
    )
    return AudioBuffer(mix, spec.sample_rate), truth
