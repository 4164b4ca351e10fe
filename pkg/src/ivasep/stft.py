"""
Short-time Fourier transform with a Hann analysis window at half overlap
and the matching (canonical dual) synthesis window.

Spectrograms are stored with shape ``(n_channels, n_freq, n_frames)`` where
``n_freq = frame_size // 2 + 1``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import InvalidInputError


@dataclass
class AudioBuffer:
    """Multichannel real-valued audio, shape ``(n_channels, n_samples)``."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=float)
        if samples.ndim == 1:
            samples = samples[None, :]
        if samples.ndim != 2 or samples.shape[0] < 1:
            raise InvalidInputError("audio must be a (channels, samples) array")
        if not np.all(np.isfinite(samples)):
            raise InvalidInputError("audio contains non-finite samples")
        self.samples = samples

    @property
    def n_channels(self) -> int:
        return self.samples.shape[0]

    @property
    def n_samples(self) -> int:
        return self.samples.shape[1]


@dataclass
class SpectrogramTensor:
    """Complex STFT data ``x[m, f, n]`` plus the framing parameters."""

    data: np.ndarray
    frame_size: int
    hop: int
    sample_rate: int | None = None

    @property
    def shape(self):
        return self.data.shape


def hann(frame_size: int) -> np.ndarray:
    """Periodic Hann window (sums to one at half overlap)."""
    n = np.arange(frame_size)
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * n / frame_size)


def dual_window(analysis: np.ndarray, hop: int) -> np.ndarray:
    """
    Canonical dual of ``analysis`` for the given hop.

    The dual ``g`` satisfies ``sum_j analysis[n + j hop] g[n + j hop] = 1``
    for every sample covered by a full set of overlapping frames, which gives
    perfect reconstruction with weighted overlap-add.
    """
    frame_size = analysis.shape[0]
    if frame_size % hop != 0:
        raise InvalidInputError("hop must divide the frame size")
    energy = np.zeros(frame_size)
    for shift in range(0, frame_size, hop):
        energy += np.roll(analysis, shift) ** 2
    return analysis / energy


def _check_frame_size(frame_size):
    if frame_size < 4 or frame_size % 2 != 0:
        raise InvalidInputError(f"frame_size must be even and >= 4, got {frame_size}")


def analyze(audio, frame_size: int) -> SpectrogramTensor:
    """
    Compute the STFT of multichannel audio.

    Parameters
    ----------
    audio: AudioBuffer or ndarray (n_channels, n_samples)
        Time-domain input; a 1-D array is treated as a single channel.
    frame_size: int
        Length of the analysis window; the hop is ``frame_size // 2``.

    Returns
    -------
    SpectrogramTensor with ``data`` of shape
    ``(n_channels, frame_size // 2 + 1, n_frames)`` and
    ``n_frames = (n_samples - frame_size) // hop + 1``.
    """
    if not isinstance(audio, AudioBuffer):
        audio = AudioBuffer(audio, sample_rate=0)
    _check_frame_size(frame_size)
    if audio.n_samples < frame_size:
        raise InvalidInputError(
            f"audio has {audio.n_samples} samples, shorter than one frame ({frame_size})"
        )

    hop = frame_size // 2
    n_frames = (audio.n_samples - frame_size) // hop + 1
    span = (n_frames - 1) * hop + frame_size

    frames = np.lib.stride_tricks.sliding_window_view(
        audio.samples[:, :span], frame_size, axis=-1
    )[:, ::hop, :]
    spec = np.fft.rfft(frames * hann(frame_size), axis=-1)

    return SpectrogramTensor(
        data=np.ascontiguousarray(spec.transpose(0, 2, 1)),
        frame_size=frame_size,
        hop=hop,
        sample_rate=audio.sample_rate or None,
    )


def synthesize(spec: SpectrogramTensor) -> AudioBuffer:
    """
    Inverse STFT by weighted overlap-add with the dual of the Hann window.

    The output has ``(n_frames - 1) * hop + frame_size`` samples. Samples in
    the first and last ``hop`` are only covered by one frame and are not
    reconstructed exactly.
    """
    data = np.asarray(spec.data)
    if data.ndim == 2:
        data = data[None]
    frame_size, hop = spec.frame_size, spec.hop
    _check_frame_size(frame_size)
    if hop != frame_size // 2:
        raise InvalidInputError(f"hop {hop} inconsistent with frame size {frame_size}")
    if data.ndim != 3 or data.shape[1] != frame_size // 2 + 1:
        raise InvalidInputError(
            f"expected {frame_size // 2 + 1} frequency bins, got shape {data.shape}"
        )

    n_chan, _, n_frames = data.shape
    frames = np.fft.irfft(data.transpose(0, 2, 1), n=frame_size, axis=-1)
    frames *= dual_window(hann(frame_size), hop)

    out = np.zeros((n_chan, (n_frames - 1) * hop + frame_size))
    # with half overlap, even and odd frames tile the signal without overlap
    for parity in range(frame_size // hop):
        block = frames[:, parity::2, :]
        start = parity * hop
        seg = block.reshape(n_chan, -1)
        out[:, start:start + seg.shape[1]] += seg

    return AudioBuffer(out, sample_rate=spec.sample_rate or 0)
