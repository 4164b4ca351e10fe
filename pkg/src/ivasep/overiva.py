"""
Overdetermined independent vector analysis (OverIVA).

Separates ``K`` sources from ``M >= K`` channels by estimating only the
``K`` demixing rows ``W_f`` plus a ``(M-K) x K`` block ``J_f`` that keeps the
background subspace orthogonal to the sources. The demixing rows follow the
iterative-projection updates of AuxIVA; ``J_f`` has a closed-form update.

All per-frequency updates belonging to one (sweep, source) step are
independent, so they are computed batched over frequencies. This yields the
same iterates as a loop over frequencies.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np

from .core import (
    ACTIVATION_FLOOR,
    COND_LIMIT,
    GAUSS,
    LAPLACE,
    SOLVE_REGULARIZATION,
    DemixingState,
    InvalidInputError,
    NumericDegeneracyError,
    SeparationConfig,
    _cond,
    _data,
    negative_log_likelihood,
    orthogonality_residual,
)


class UpdateEvent(NamedTuple):
    """
    Snapshot handed to a solver callback after each update.

    ``stage`` is one of ``'activations'``, ``'demix'`` or ``'background'``.
    ``state``, ``r`` and ``Y`` are live references to the solver buffers.
    ``V`` is the weighted covariance used by a ``'demix'`` update.
    """

    stage: str
    iteration: int
    source: int
    state: DemixingState
    r: np.ndarray
    Y: np.ndarray
    V: np.ndarray | None = None


@dataclass
class SeparationResult:
    Y: np.ndarray
    state: DemixingState
    trace: np.ndarray = field(default_factory=lambda: np.zeros(0))
    orthogonality: np.ndarray = field(default_factory=lambda: np.zeros(0))
    n_iter: int = 0


def update_activations(Y: np.ndarray, model: str = GAUSS, floor: float = ACTIVATION_FLOOR):
    """
    Source activations from separated signals.

    Parameters
    ----------
    Y: ndarray (..., F, N)
        Separated signals; the frequency axis is the second to last.
    model: str
        ``'gauss'``: ``r = mean_f |y|^2``; ``'laplace'``: ``r = 2 ||y_n||``.
    floor: float
        Lower bound applied to every activation.
    """
    power = np.sum(np.abs(Y) ** 2, axis=-2)
    if model == GAUSS:
        r = power / Y.shape[-2]
    elif model == LAPLACE:
        r = 2.0 * np.sqrt(power)
    else:
        raise InvalidInputError(f"unknown source model {model!r}")
    return np.maximum(r, floor)


def weighted_covariance(X: np.ndarray, r: np.ndarray) -> np.ndarray:
    """``V = (1/N) sum_n x_n x_n^H / r_n`` for ``X`` of shape ``(..., M, N)``."""
    X = np.asarray(X)
    n_frames = X.shape[-1]
    V = (X * (1.0 / r)) @ np.conj(np.swapaxes(X, -1, -2)) / n_frames
    return 0.5 * (V + np.conj(np.swapaxes(V, -1, -2)))


def update_demix_vector(
    demixing: np.ndarray, V: np.ndarray, k: int, reg: float = SOLVE_REGULARIZATION
) -> np.ndarray:
    """
    Iterative-projection update of one demixing filter.

    Solves ``(What V) w = e_k`` and rescales so that ``w^H V w = 1``.

    Parameters
    ----------
    demixing: ndarray (..., M, M)
        Current full demixing matrices.
    V: ndarray (..., M, M)
        Weighted covariance of source ``k``.
    k: int
        Index of the row being updated.
    reg: float
        Relative diagonal loading used when ``What V`` is ill-conditioned.

    Returns
    -------
    ndarray (..., M), the new filters ``w`` (not conjugated).
    """
    demixing = np.asarray(demixing)
    V = np.asarray(V)
    batch = np.broadcast_shapes(demixing.shape[:-2], V.shape[:-2])
    n_chan = V.shape[-1]

    A = demixing @ V
    ill = _cond(A) > COND_LIMIT
    if np.any(ill):
        # load the diagonal proportionally to the mean eigenvalue
        load = reg * np.trace(V, axis1=-2, axis2=-1).real / n_chan
        A = demixing @ (V + (ill * load)[..., None, None] * np.eye(n_chan))

    rhs = np.zeros(batch + (n_chan, 1), dtype=complex)
    rhs[..., k, 0] = 1.0
    try:
        w = np.linalg.solve(A, rhs)[..., 0]
    except np.linalg.LinAlgError:
        raise NumericDegeneracyError("singular weighted demixing system", source=k) from None

    denom = _quad(w, V)
    bad = ~np.isfinite(denom) | (denom <= 0) | ~np.all(np.isfinite(w), axis=-1)
    if np.any(bad):
        freq = int(np.flatnonzero(bad.ravel())[0]) if bad.ndim else None
        raise NumericDegeneracyError("degenerate filter normalization", source=k, freq=freq)
    w = w / np.sqrt(denom)[..., None]

    if np.any(ill):
        w = _keep_descent(demixing, V, w, k, ill)
    return w


def _quad(w, V):
    return np.einsum("...m,...mn,...n->...", np.conj(w), V, w).real


def _keep_descent(demixing, V, w, k, ill):
    """
    Where the system was loaded, fall back to the rescaled previous filter
    if it has the lower cost.

    Both candidates satisfy ``w^H V w = 1``, so the per-row cost
    ``-2 log|det What| + w^H V w`` only differs through the determinant.
    """
    demixing, V, ill = np.broadcast_arrays(demixing, V, ill[..., None, None])
    ill = ill[..., 0, 0]
    D, Vi, wi = demixing[ill], V[ill], w[ill]
    w_old = np.conj(D[:, k, :])
    d_old = _quad(w_old, Vi)
    ok = np.isfinite(d_old) & (d_old > 0)
    w_old[ok] /= np.sqrt(d_old[ok])[:, None]

    D_new, D_old = D.copy(), D.copy()
    D_new[:, k, :] = np.conj(wi)
    D_old[:, k, :] = np.conj(w_old)
    _, ld_new = np.linalg.slogdet(D_new)
    _, ld_old = np.linalg.slogdet(D_old)
    use_old = ok & (ld_old > ld_new)
    wi[use_old] = w_old[use_old]
    w = w.copy()
    w[ill] = wi
    return w


def demix_step(demixing, Xf, r_k, k, reg: float = SOLVE_REGULARIZATION):
    """
    Weighted covariance, filter update and separated signal for row ``k``.

    After the solve, the scale is refined with ``(1/N) sum_n |w^H x_n|^2 / r_n``,
    which equals ``w^H V w`` but sums positive terms only. It stays accurate
    when tiny activations make ``V`` badly conditioned.

    Returns ``(w, y, V)`` with ``w`` of shape (F, M) and ``y`` of shape (F, N).
    """
    V = weighted_covariance(Xf, r_k)
    w = update_demix_vector(demixing, V, k, reg)
    y = np.einsum("fm,fmn->fn", np.conj(w), Xf)
    d = np.mean(np.abs(y) ** 2 / r_k, axis=-1)
    if np.all(np.isfinite(d) & (d > 0)):
        s = 1.0 / np.sqrt(d)
        w = w * s[:, None]
        y = y * s[:, None]
    return w, y, V


def update_background(W: np.ndarray, C: np.ndarray, reg: float = SOLVE_REGULARIZATION):
    """
    Closed-form background block making the background orthogonal to the sources.

    Returns ``J = (E2 C W^H)(E1 C W^H)^{-1}`` of shape ``(..., M-K, K)``, so that
    ``W C U^H = 0`` with ``U = [J, -I]``.
    """
    n_src, n_chan = W.shape[-2:]
    CW = C @ np.conj(np.swapaxes(W, -1, -2))
    top, bottom = CW[..., :n_src, :], CW[..., n_src:, :]
    if n_chan == n_src:
        return bottom.copy()

    ill = _cond(top) > COND_LIMIT
    if np.any(ill):
        load = reg * np.linalg.norm(top, axis=(-2, -1)) / np.sqrt(n_src)
        top = top + (ill * load)[..., None, None] * np.eye(n_src)
    try:
        # J top = bottom  <=>  top^T J^T = bottom^T
        Jt = np.linalg.solve(np.swapaxes(top, -1, -2), np.swapaxes(bottom, -1, -2))
    except np.linalg.LinAlgError:
        raise NumericDegeneracyError("singular source cross-covariance block") from None
    J = np.swapaxes(Jt, -1, -2)
    bad = ~np.all(np.isfinite(J), axis=(-2, -1))
    if np.any(bad):
        freq = int(np.flatnonzero(bad.ravel())[0]) if bad.ndim else None
        raise NumericDegeneracyError("singular source cross-covariance block", freq=freq)
    return J


def _objective(state, X, Y, cfg):
    if cfg.model == GAUSS:
        r = update_activations(Y, GAUSS, cfg.activation_floor)
        return negative_log_likelihood(state, X, r, GAUSS, cfg.solve_regularization)
    return negative_log_likelihood(state, X, None, LAPLACE, cfg.solve_regularization)


def overiva_run(
    X,
    cfg: SeparationConfig,
    callback: Callable[[UpdateEvent], None] | None = None,
) -> SeparationResult:
    """
    Run OverIVA on a multichannel spectrogram.

    Parameters
    ----------
    X: ndarray (M, F, N) or SpectrogramTensor
        STFT of the microphone signals.
    cfg: SeparationConfig
        Number of sources, source model, number of sweeps and floors.
    callback: callable, optional
        Called with an :class:`UpdateEvent` after every activation, filter
        and background update.

    Returns
    -------
    SeparationResult with the separated signals ``Y`` (K, F, N), the final
    state, the objective trace (initial value followed by one value per
    sweep, empty if ``cfg.compute_objective`` is false) and the largest
    orthogonality residual per sweep.
    """
    X = np.asarray(_data(X))
    if X.ndim != 3 or X.shape[2] < 1:
        raise InvalidInputError(f"expected a (M, F, N) spectrogram, got shape {X.shape}")
    n_chan, n_freq, n_frames = X.shape
    n_src = cfg.n_src
    if n_src > n_chan:
        raise InvalidInputError(
            f"cannot separate {n_src} sources from {n_chan} channels"
        )

    state = DemixingState.initial(X, n_src)
    Xf = np.ascontiguousarray(X.transpose(1, 0, 2))
    Y = np.ascontiguousarray(X[:n_src]).astype(complex)
    r = update_activations(Y, cfg.model, cfg.activation_floor)

    trace = [_objective(state, X, Y, cfg)] if cfg.compute_objective else []
    ortho = []
    reg = cfg.solve_regularization

    n_iter = 0
    for it in range(cfg.max_iters):
        W_prev = state.W.copy() if cfg.convergence_tol is not None else None

        for k in range(n_src):
            r[k] = update_activations(Y[k], cfg.model, cfg.activation_floor)
            if callback is not None:
                callback(UpdateEvent("activations", it, k, state, r, Y))

            try:
                w, Y[k], V = demix_step(state.demixing_matrix(), Xf, r[k], k, reg)
            except NumericDegeneracyError as e:
                raise e.with_context(iteration=it, source=k) from None
            state.W[:, k, :] = np.conj(w)
            if callback is not None:
                callback(UpdateEvent("demix", it, k, state, r, Y, V))

            if n_src < n_chan:
                try:
                    state.J = update_background(state.W, state.C, reg)
                except NumericDegeneracyError as e:
                    raise e.with_context(iteration=it, source=k) from None
                if callback is not None:
                    callback(UpdateEvent("background", it, k, state, r, Y))

        n_iter = it + 1
        ortho.append(float(np.max(orthogonality_residual(state))))
        if cfg.compute_objective:
            trace.append(_objective(state, X, Y, cfg))

        if W_prev is not None and np.max(np.abs(state.W - W_prev)) < cfg.convergence_tol:
            break

    return SeparationResult(Y, state, np.array(trace), np.array(ortho), n_iter)


def ive_run(X, cfg: SeparationConfig, callback=None) -> SeparationResult:
    """Single source extraction: OverIVA with ``n_src = 1``."""
    if cfg.n_src != 1:
        raise InvalidInputError(f"extraction requires n_src = 1, got {cfg.n_src}")
    return overiva_run(X, cfg, callback)
