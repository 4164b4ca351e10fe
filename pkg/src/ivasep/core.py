"""
Shared types for the IVA solvers: demixing state, configuration, input
covariance, demixing and the negative log-likelihood monitor.

Array conventions
-----------------
* spectrograms ``X``: ``(n_chan, n_freq, n_frames)``
* separated signals ``Y``: ``(n_src, n_freq, n_frames)``
* per-frequency matrices are stacked on the first axis, e.g. ``W`` is
  ``(n_freq, n_src, n_chan)`` with row ``k`` equal to ``w_kf^H``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

GAUSS = "gauss"
LAPLACE = "laplace"
MODELS = (GAUSS, LAPLACE)

ACTIVATION_FLOOR = 1e-10
SOLVE_REGULARIZATION = 1e-10
COND_LIMIT = 1e12


class InvalidInputError(ValueError):
    """Raised on malformed or inconsistent inputs."""


class NumericDegeneracyError(ArithmeticError):
    """
    Raised when a linear system is singular even after regularization.

    The offending indices are kept as attributes so callers can report them.
    """

    def __init__(self, message, freq=None, source=None, iteration=None):
        self.reason = message
        self.freq = freq
        self.source = source
        self.iteration = iteration
        ctx = []
        if iteration is not None:
            ctx.append(f"iteration={iteration}")
        if source is not None:
            ctx.append(f"source={source}")
        if freq is not None:
            ctx.append(f"freq={freq}")
        if ctx:
            message = f"{message} ({', '.join(ctx)})"
        super().__init__(message)

    def with_context(self, **kwargs):
        ctx = dict(freq=self.freq, source=self.source, iteration=self.iteration)
        ctx.update({k: v for k, v in kwargs.items() if v is not None})
        return NumericDegeneracyError(self.reason, **ctx)


@dataclass
class SeparationConfig:
    """
    Parameters shared by the OverIVA and AuxIVA solvers.

    ``convergence_tol`` enables an early stop once the largest element-wise
    change of the demixing matrices over one sweep drops below it.
    """

    n_src: int = 1
    model: str = GAUSS
    max_iters: int = 100
    activation_floor: float = ACTIVATION_FLOOR
    solve_regularization: float = SOLVE_REGULARIZATION
    convergence_tol: float | None = None
    compute_objective: bool = True

    def __post_init__(self):
        if self.model not in MODELS:
            raise InvalidInputError(f"unknown source model {self.model!r}")
        if self.n_src < 1:
            raise InvalidInputError("n_src must be at least 1")
        if self.max_iters < 1:
            raise InvalidInputError("max_iters must be at least 1")
        if self.activation_floor <= 0 or self.solve_regularization <= 0:
            raise InvalidInputError("floors must be positive")


@dataclass
class DemixingState:
    """
    Per-frequency demixing parameters.

    The full demixing matrix is ``[W; U]`` with ``U = [J, -I]``; only ``W``
    and ``J`` are stored, together with the input covariance ``C``.
    """

    W: np.ndarray
    J: np.ndarray
    C: np.ndarray = field(repr=False)

    @property
    def n_freq(self) -> int:
        return self.W.shape[0]

    @property
    def n_src(self) -> int:
        return self.W.shape[1]

    @property
    def n_chan(self) -> int:
        return self.W.shape[2]

    @property
    def U(self) -> np.ndarray:
        """Background demixing rows ``[J, -I]``, shape ``(F, M-K, M)``."""
        n_freq, n_src, n_chan = self.W.shape
        eye = np.broadcast_to(np.eye(n_chan - n_src), (n_freq, n_chan - n_src, n_chan - n_src))
        return np.concatenate([self.J, -eye], axis=2)

    def demixing_matrix(self) -> np.ndarray:
        """Dense ``(F, M, M)`` demixing matrices ``[W; U]``."""
        return np.concatenate([self.W, self.U], axis=1)

    def copy(self) -> "DemixingState":
        return DemixingState(self.W.copy(), self.J.copy(), self.C)

    @classmethod
    def initial(cls, X: np.ndarray, n_src: int) -> "DemixingState":
        """Rectangular identity ``W = [I 0]``, ``J = 0``."""
        n_chan, n_freq, _ = X.shape
        if not 1 <= n_src <= n_chan:
            raise InvalidInputError(
                f"number of sources ({n_src}) must be between 1 and the number "
                f"of channels ({n_chan})"
            )
        W = np.tile(np.eye(n_src, n_chan, dtype=complex), (n_freq, 1, 1))
        J = np.zeros((n_freq, n_chan - n_src, n_src), dtype=complex)
        C = compute_covariance(X.transpose(1, 0, 2))
        return cls(W, J, C)


def compute_covariance(X: np.ndarray) -> np.ndarray:
    """
    Sample covariance ``(1/N) X X^H`` of ``(..., M, N)`` data, symmetrized.
    """
    X = np.asarray(X)
    n_frames = X.shape[-1]
    if n_frames == 0:
        raise InvalidInputError("covariance of zero frames")
    C = X @ np.conj(np.swapaxes(X, -1, -2)) / n_frames
    return 0.5 * (C + np.conj(np.swapaxes(C, -1, -2)))


def _check_shapes(state: DemixingState, X: np.ndarray):
    X = np.asarray(X)
    if X.ndim != 3 or X.shape[0] != state.n_chan or X.shape[1] != state.n_freq:
        raise InvalidInputError(
            f"spectrogram shape {X.shape} inconsistent with demixing state "
            f"(n_chan={state.n_chan}, n_freq={state.n_freq})"
        )
    return X


def _data(X):
    return getattr(X, "data", X)


def demix(state: DemixingState, X) -> np.ndarray:
    """Separated sources ``s_kfn = w_kf^H x_fn``, shape ``(K, F, N)``."""
    X = _check_shapes(state, _data(X))
    return np.einsum("fkm,mfn->kfn", state.W, X)


def background_demix(state: DemixingState, X) -> np.ndarray:
    """Background signals ``z_fn = U_f x_fn``, shape ``(M-K, F, N)``."""
    X = _check_shapes(state, _data(X))
    return np.einsum("fkm,mfn->kfn", state.U, X)


def orthogonality_residual(state: DemixingState, eps: float = 1e-15) -> np.ndarray:
    """Per-frequency ``||W C U^H||_F / max(||C||_F, eps)``."""
    cross = state.W @ state.C @ np.conj(state.U).swapaxes(1, 2)
    num = np.linalg.norm(cross, axis=(1, 2))
    den = np.maximum(np.linalg.norm(state.C, axis=(1, 2)), eps)
    return num / den


def _cond(A):
    with np.errstate(all="ignore"):
        c = np.linalg.cond(A)
    return np.where(np.isfinite(c), c, np.inf)


def _logabsdet_demix(state: DemixingState) -> np.ndarray:
    sign, logabsdet = np.linalg.slogdet(state.demixing_matrix())
    bad = np.flatnonzero((sign == 0) | ~np.isfinite(logabsdet))
    if bad.size:
        raise NumericDegeneracyError("singular demixing matrix", freq=int(bad[0]))
    return logabsdet


def _background_terms(state: DemixingState, X: np.ndarray, reg: float) -> np.ndarray:
    """Per-frequency ``N log|det R_f| + tr(R_f^{-1} Z_f Z_f^H)``."""
    n_back = state.n_chan - state.n_src
    if n_back == 0:
        return np.zeros(state.n_freq)
    n_frames = X.shape[-1]
    U = state.U
    R = U @ state.C @ np.conj(U).swapaxes(1, 2)
    R = 0.5 * (R + np.conj(R).swapaxes(1, 2))
    eye = np.eye(n_back)
    ill = _cond(R) > COND_LIMIT
    if np.any(ill):
        R = R + reg * ill[:, None, None] * eye
    sign, logdet = np.linalg.slogdet(R)
    bad = np.flatnonzero((sign == 0) | ~np.isfinite(logdet))
    if bad.size:
        raise NumericDegeneracyError("singular background covariance", freq=int(bad[0]))
    Z = np.einsum("fkm,mfn->fkn", U, X)
    ZZ = Z @ np.conj(Z).swapaxes(1, 2)
    quad = np.trace(np.linalg.solve(R, ZZ), axis1=1, axis2=2).real
    return n_frames * logdet + quad


def background_quadratic(state: DemixingState, X) -> np.ndarray:
    """Per-frequency ``sum_n z_fn^H R_f^{-1} z_fn`` with ``R_f = U_f C_f U_f^H``."""
    X = _check_shapes(state, _data(X))
    U = state.U
    R = U @ state.C @ np.conj(U).swapaxes(1, 2)
    Z = np.einsum("fkm,mfn->fkn", U, X)
    ZZ = Z @ np.conj(Z).swapaxes(1, 2)
    return np.trace(np.linalg.solve(R, ZZ), axis1=1, axis2=2).real


def frequency_objective(
    state: DemixingState, X, r: np.ndarray, reg: float = SOLVE_REGULARIZATION
) -> np.ndarray:
    """
    Per-frequency part of the Gauss-model negative log-likelihood.

    Returns ``g_f = -2N log|det What_f| + sum_kn |s_kfn|^2 / r_kn
    + N log|det R_f| + tr(R_f^{-1} Z_f Z_f^H)`` so that the full objective is
    ``sum_f g_f + F sum_kn log r_kn``. Only ``g_f`` depends on the parameters
    of frequency ``f``.
    """
    X = _check_shapes(state, _data(X))
    r = np.asarray(r, dtype=float)
    n_frames = X.shape[-1]
    Y = demix(state, X)
    quad = np.sum(np.abs(Y) ** 2 / r[:, None, :], axis=(0, 2))
    return -2 * n_frames * _logabsdet_demix(state) + quad + _background_terms(state, X, reg)


def negative_log_likelihood(
    state: DemixingState,
    X,
    r: np.ndarray | None = None,
    model: str = GAUSS,
    reg: float = SOLVE_REGULARIZATION,
) -> float:
    """
    Negative log-likelihood of the observations, up to constants.

    Parameters
    ----------
    state: DemixingState
        Current demixing parameters.
    X: ndarray (M, F, N) or SpectrogramTensor
        Observed spectrogram.
    r: ndarray (K, N)
        Source activations (variances); required for the Gauss model and
        ignored for the Laplace model.
    model: str
        ``'gauss'`` (time-varying Gaussian) or ``'laplace'`` (spherical Laplace).
    reg: float
        Diagonal loading applied to an ill-conditioned background covariance.

    The background covariance is set to its optimum ``R_f = U_f C_f U_f^H``.
    """
    X = _check_shapes(state, _data(X))
    n_freq = state.n_freq
    if model == GAUSS:
        if r is None:
            raise InvalidInputError("activations are required for the Gauss model")
        r = np.asarray(r, dtype=float)
        if np.any(r <= 0):
            raise InvalidInputError("activations must be strictly positive")
        return float(
            np.sum(frequency_objective(state, X, r, reg)) + n_freq * np.sum(np.log(r))
        )
    if model == LAPLACE:
        n_frames = X.shape[-1]
        Y = demix(state, X)
        spatial = -2 * n_frames * _logabsdet_demix(state) + _background_terms(state, X, reg)
        return float(np.sum(spatial) + np.sum(np.sqrt(np.sum(np.abs(Y) ** 2, axis=1))))
    raise InvalidInputError(f"unknown source model {model!r}")


def laplace_majorant(
    state: DemixingState, X, r: np.ndarray, reg: float = SOLVE_REGULARIZATION
) -> float:
    """
    Quadratic majorizer of the Laplace objective at activations ``r``.

    Uses ``||s|| <= ||s||^2 / r + r / 4``, tight at ``r = 2 ||s||``.
    """
    X = _check_shapes(state, _data(X))
    r = np.asarray(r, dtype=float)
    return float(np.sum(frequency_objective(state, X, r, reg)) + np.sum(r) / 4)
