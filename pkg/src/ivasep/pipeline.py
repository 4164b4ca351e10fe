"""End-to-end separation: STFT, solver, projection back, inverse STFT."""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .auxiva import auxiva_run, pca_auxiva_run, select_by_power
from .core import InvalidInputError, SeparationConfig, _data
from .overiva import overiva_run
from .scaling import projection_back
from .stft import AudioBuffer, analyze, synthesize

ALGORITHMS = ("overiva", "auxiva", "pca-auxiva")


@dataclass
class Separation:
    Y: np.ndarray  # (K, F, N), projected back onto the reference mic
    trace: np.ndarray
    runtime: float  # solver wall time in seconds
    orthogonality: np.ndarray = field(default_factory=lambda: np.zeros(0))
    selected: np.ndarray | None = None


def separate_spectrogram(X, cfg: SeparationConfig, algo: str = "overiva", ref: int = 0) -> Separation:
    """
    Separate ``cfg.n_src`` sources from a ``(M, F, N)`` spectrogram.

    * ``overiva``: OverIVA on all channels.
    * ``auxiva``: determined AuxIVA on all channels, then the ``K`` outputs
      with the largest power after projection back.
    * ``pca-auxiva``: PCA down to ``K`` channels, then AuxIVA.

    Outputs are projected back onto microphone ``ref``.
    """
    X = np.asarray(_data(X))
    if cfg.n_src > X.shape[0]:
        raise InvalidInputError(f"cannot separate {cfg.n_src} sources from {X.shape[0]} channels")

    t0 = time.perf_counter()
    if algo == "overiva":
        res = overiva_run(X, cfg)
        runtime = time.perf_counter() - t0
        Y = projection_back(res.Y, X, ref)
        return Separation(Y, res.trace, runtime, res.orthogonality)
    if algo == "auxiva":
        res = auxiva_run(X, cfg)
        runtime = time.perf_counter() - t0
        Y, idx = select_by_power(projection_back(res.Y, X, ref), cfg.n_src)
        return Separation(Y, res.trace, runtime, selected=idx)
    if algo == "pca-auxiva":
        res = pca_auxiva_run(X, cfg)
        runtime = time.perf_counter() - t0
        return Separation(projection_back(res.Y, X, ref), res.trace, runtime)
    raise InvalidInputError(f"unknown algorithm {algo!r}")


def separate_audio(audio: AudioBuffer, cfg: SeparationConfig, algo="overiva", frame_size=4096, ref=0):
    """
    Separate time-domain audio; returns ``(AudioBuffer of K channels, Separation)``.

    The output is padded or truncated to the input length.
    """
    X = analyze(audio, frame_size)
    sep = separate_spectrogram(X, cfg, algo, ref)
    out = synthesize(type(X)(sep.Y, X.frame_size, X.hop, X.sample_rate)).samples
    T = audio.n_samples
    if out.shape[1] < T:
        out = np.pad(out, ((0, 0), (0, T - out.shape[1])))
    return AudioBuffer(out[:, :T], audio.sample_rate), sep


def evaluate_mixture(mix: AudioBuffer, truth, cfg: SeparationConfig, algo="overiva",
                     frame_size=512, metric="si_sdr", filter_taps=512):
    """
    Separate a simulated mixture and score it against the true target images.

    One frame is trimmed from each end before scoring, where the analysis
    window coverage is incomplete. Returns ``(SDRImprovement, Separation)``.
    """
    from .metrics import sdr_improvement

    ref = truth.ref_mic
    out, sep = separate_audio(mix, cfg, algo, frame_size, ref)
    sl = slice(frame_size, mix.n_samples - frame_size)
    imp = sdr_improvement(
        out.samples[:, sl], mix.samples[ref, sl], truth.images[:, sl], metric=metric, filter_taps=filter_taps
    )
    return imp, sep
