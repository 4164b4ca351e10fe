"""
Separation quality metrics.

``si_sdr`` is the scale-invariant SDR. ``filtered_sdr`` allows an L-tap
distortion filter between reference and estimate, which approximates the
bss_eval SDR (that one also uses 512 taps) without the SIR/SAR split.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
import scipy.linalg
from scipy.signal import fftconvolve

from .core import SOLVE_REGULARIZATION, InvalidInputError

SDR_CAP = 100.0
MAX_PERMUTATION_SOURCES = 8


def _ratio_db(num, den):
    if den <= 0:
        return SDR_CAP
    if num <= 0:
        return -SDR_CAP
    return float(np.clip(10 * np.log10(num / den), -SDR_CAP, SDR_CAP))


def _check_pair(estimate, reference):
    estimate = np.asarray(estimate, dtype=float)
    reference = np.asarray(reference, dtype=float)
    if estimate.ndim != 1 or estimate.shape != reference.shape or estimate.size < 1:
        raise InvalidInputError(
            f"estimate {estimate.shape} and reference {reference.shape} must be equal-length 1-D signals"
        )
    if not np.any(reference):
        raise InvalidInputError("reference signal is all zeros")
    return estimate, reference


def si_sdr(estimate, reference) -> float:
    """Scale-invariant SDR in dB, clipped to [-100, 100]."""
    estimate, reference = _check_pair(estimate, reference)
    alpha = np.dot(estimate, reference) / np.dot(reference, reference)
    proj = alpha * reference
    return _ratio_db(np.sum(proj ** 2), np.sum((estimate - proj) ** 2))


def filtered_sdr(estimate, reference, filter_taps: int = 512, reg: float = SOLVE_REGULARIZATION) -> float:
    """
    SDR after the best causal ``filter_taps``-tap filtering of the reference.

    The filter is the exact least-squares fit of the truncated convolution
    ``(h * reference)[:T]`` to the estimate. Diagonal loading relative to the
    reference energy is added only if the normal equations are not positive
    definite.
    """
    estimate, reference = _check_pair(estimate, reference)
    L = int(filter_taps)
    if L < 1 or estimate.size <= L:
        raise InvalidInputError(f"need 1 <= filter_taps < signal length, got {L}")
    n = reference.size
    # correlations over the full (zero padded) convolution span
    acf = fftconvolve(reference, reference[::-1])[n - 1:n - 1 + L]
    xcf = fftconvolve(estimate, reference[::-1])[n - 1:n - 1 + L]
    # truncation removes the last samples of each shifted copy from the Gram
    # matrix: R_ij = acf_|i-j| - sum_{p < min(i,j)} y_{p+i-m} y_{p+j-m}, y = reversed tail
    y = reference[::-1][:L]
    H = np.outer(y, y)
    tail = np.zeros((L, L))
    for i in range(1, L):
        tail[i, 1:] = tail[i - 1, :-1] + H[i - 1, :-1]
    R = scipy.linalg.toeplitz(acf) - tail
    try:
        h = scipy.linalg.cho_solve(scipy.linalg.cho_factor(R), xcf)
    except np.linalg.LinAlgError:
        h = np.linalg.solve(R + reg * acf[0] * np.eye(L), xcf)
    proj = fftconvolve(reference, h)[:n]
    return _ratio_db(np.sum(proj ** 2), np.sum((estimate - proj) ** 2))


@dataclass
class SDRImprovement:
    improvement: np.ndarray  # per reference, dB
    sdr: np.ndarray  # separated SDR per reference, dB
    baseline: np.ndarray  # mixture SDR per reference, dB
    permutation: tuple  # permutation[i] = index of the estimate matched to reference i


def best_permutation(scores: np.ndarray):
    """Assignment (estimate per reference) maximizing the mean score, by enumeration."""
    K = scores.shape[0]
    if K > MAX_PERMUTATION_SOURCES:
        raise InvalidInputError(f"refusing to enumerate {K}! permutations")
    best, best_val = None, -np.inf
    for perm in itertools.permutations(range(scores.shape[1]), K):
        val = np.mean(scores[np.arange(K), perm])
        if val > best_val:
            best, best_val = perm, val
    return tuple(int(p) for p in best)


def sdr_improvement(separated, mixture, references, metric: str = "si_sdr", filter_taps: int = 512):
    """
    SDR improvement of separated signals over the unprocessed mixture.

    Parameters
    ----------
    separated: ndarray (K, T)
        Estimated sources.
    mixture: ndarray (T,)
        Reference-microphone mixture, the baseline estimate of every source.
    references: ndarray (K, T)
        True source images at the reference microphone.
    metric: str
        ``'si_sdr'`` or ``'filtered_sdr'``.

    The estimate-to-reference assignment maximizing the mean SDR over all
    permutations is used.
    """
    separated = np.atleast_2d(np.asarray(separated, dtype=float))
    references = np.atleast_2d(np.asarray(references, dtype=float))
    mixture = np.asarray(mixture, dtype=float)
    if separated.shape != references.shape:
        raise InvalidInputError(
            f"{separated.shape[0]} separated signals for {references.shape[0]} references"
        )
    K = references.shape[0]
    if K > MAX_PERMUTATION_SOURCES:
        raise InvalidInputError(f"refusing to enumerate {K}! permutations")

    if metric == "si_sdr":
        fn = si_sdr
    elif metric == "filtered_sdr":
        def fn(e, r):
            return filtered_sdr(e, r, filter_taps)
    else:
        raise InvalidInputError(f"unknown metric {metric!r}")

    scores = np.array([[fn(separated[j], references[i]) for j in range(K)] for i in range(K)])
    perm = best_permutation(scores)
    sdr = scores[np.arange(K), perm]
    baseline = np.array([fn(mixture, references[i]) for i in range(K)])
    return SDRImprovement(sdr - baseline, sdr, baseline, perm)
