"""
Determined baselines: M-channel AuxIVA with power-based output selection,
and PCA channel reduction followed by AuxIVA.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import (
    GAUSS,
    DemixingState,
    InvalidInputError,
    NumericDegeneracyError,
    SeparationConfig,
    _data,
    compute_covariance,
    negative_log_likelihood,
)
from .overiva import demix_step, update_activations


@dataclass
class AuxIVAResult:
    Y: np.ndarray
    W: np.ndarray
    trace: np.ndarray = field(default_factory=lambda: np.zeros(0))
    n_iter: int = 0


def _determined_objective(W, C, X, Y, cfg):
    state = DemixingState(W, np.zeros((W.shape[0], 0, W.shape[1]), dtype=complex), C)
    if cfg.model == GAUSS:
        r = update_activations(Y, GAUSS, cfg.activation_floor)
        return negative_log_likelihood(state, X, r, GAUSS, cfg.solve_regularization)
    return negative_log_likelihood(state, X, None, cfg.model, cfg.solve_regularization)


def auxiva_run(X, cfg: SeparationConfig, W0: np.ndarray | None = None, callback=None):
    """
    Determined AuxIVA with iterative projection.

    All ``M`` demixing rows are updated; ``cfg.n_src`` is ignored. Within a
    sweep the rows are visited in order and the activations of a source are
    refreshed right before its row is updated.

    Parameters
    ----------
    X: ndarray (M, F, N) or SpectrogramTensor
        STFT of the microphone signals.
    cfg: SeparationConfig
        Source model, number of sweeps, floors.
    W0: ndarray (F, M, M), optional
        Initial demixing matrices (default identity).
    callback: callable, optional
        Called as ``callback(iteration, source, W, r, V)`` after each row update.

    Returns
    -------
    AuxIVAResult with ``Y`` (M, F, N), ``W`` (F, M, M) and the objective trace.
    """
    X = np.asarray(_data(X))
    if X.ndim != 3:
        raise InvalidInputError(f"expected a (M, F, N) spectrogram, got shape {X.shape}")
    n_chan, n_freq, n_frames = X.shape

    if W0 is None:
        W = np.tile(np.eye(n_chan, dtype=complex), (n_freq, 1, 1))
    else:
        W = np.array(W0, dtype=complex)
        if W.shape != (n_freq, n_chan, n_chan):
            raise InvalidInputError(f"W0 has shape {W.shape}, expected {(n_freq, n_chan, n_chan)}")

    Xf = np.ascontiguousarray(X.transpose(1, 0, 2))
    Y = np.einsum("fkm,fmn->kfn", W, Xf)
    r = update_activations(Y, cfg.model, cfg.activation_floor)
    C = compute_covariance(Xf) if cfg.compute_objective else None

    trace = [_determined_objective(W, C, X, Y, cfg)] if cfg.compute_objective else []
    n_iter = 0
    for it in range(cfg.max_iters):
        W_prev = W.copy() if cfg.convergence_tol is not None else None
        for k in range(n_chan):
            r[k] = update_activations(Y[k], cfg.model, cfg.activation_floor)
            try:
                w, Y[k], V = demix_step(W, Xf, r[k], k, cfg.solve_regularization)
            except NumericDegeneracyError as e:
                raise e.with_context(iteration=it, source=k) from None
            W[:, k, :] = np.conj(w)
            if callback is not None:
                callback(it, k, W, r, V)

        n_iter = it + 1
        if cfg.compute_objective:
            trace.append(_determined_objective(W, C, X, Y, cfg))
        if W_prev is not None and np.max(np.abs(W - W_prev)) < cfg.convergence_tol:
            break

    return AuxIVAResult(Y, W, np.array(trace), n_iter)


def select_by_power(Y: np.ndarray, n_src: int):
    """
    Keep the ``n_src`` outputs with the largest power.

    Power is ``sum_{f,n} |y|^2``; ties go to the lower index. Returns the
    selected signals and their indices, in increasing index order.
    """
    Y = np.asarray(Y)
    if not 1 <= n_src <= Y.shape[0]:
        raise InvalidInputError(f"cannot select {n_src} of {Y.shape[0]} outputs")
    power = np.sum(np.abs(Y.reshape(Y.shape[0], -1)) ** 2, axis=1)
    order = np.argsort(-power, kind="stable")
    idx = np.sort(order[:n_src])
    return Y[idx], idx


def _fix_signs(vecs):
    # first non-negligible component of each eigenvector made real positive
    mag = np.abs(vecs)
    tol = 1e-12 * np.max(mag, axis=-2, keepdims=True)
    first = np.argmax(mag > tol, axis=-2)
    pivot = np.take_along_axis(vecs, first[..., None, :], axis=-2)
    phase = pivot / np.maximum(np.abs(pivot), np.finfo(float).tiny)
    return vecs * np.conj(phase)


def pca_reduce(X, n_src: int):
    """
    Project each frequency onto its ``n_src`` principal components.

    Returns the reduced spectrogram ``(n_src, F, N)`` and the projection
    matrices ``P`` of shape ``(F, n_src, M)`` whose rows are the leading
    eigenvectors (conjugated) of the input covariance, in decreasing
    eigenvalue order. No whitening is applied.
    """
    X = np.asarray(_data(X))
    n_chan, n_freq, _ = X.shape
    if not 1 <= n_src <= n_chan:
        raise InvalidInputError(f"cannot reduce {n_chan} channels to {n_src}")
    Xf = X.transpose(1, 0, 2)
    C = compute_covariance(Xf)
    _, vecs = np.linalg.eigh(C)
    vecs = _fix_signs(vecs[..., ::-1][..., :n_src])
    P = np.conj(vecs).swapaxes(1, 2)
    Xr = np.einsum("fkm,fmn->kfn", P, Xf)
    return Xr, P


def pca_auxiva_run(X, cfg: SeparationConfig, callback=None):
    """
    PCA reduction to ``cfg.n_src`` channels followed by determined AuxIVA.

    The returned ``W`` is the overall ``(F, K, M)`` demixing applied to the
    original channels.
    """
    Xr, P = pca_reduce(X, cfg.n_src)
    res = auxiva_run(Xr, cfg, callback=callback)
    res.W = res.W @ P
    return res
