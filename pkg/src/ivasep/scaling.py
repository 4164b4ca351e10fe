"""Scale restoration by projection back onto a reference microphone."""
import numpy as np

from .core import ACTIVATION_FLOOR, InvalidInputError, _data


def projection_back(Y, X, ref: int = 0, floor: float = ACTIVATION_FLOOR) -> np.ndarray:
    """
    Rescale separated signals to their image at a reference microphone.

    For each source ``k`` and frequency ``f`` the scalar
    ``c_kf = sum_n x_ref,fn conj(y_kfn) / max(sum_n |y_kfn|^2, floor)`` is the
    least-squares fit of ``y_kf`` to the reference channel.

    Parameters
    ----------
    Y: ndarray (K, F, N)
        Separated signals with arbitrary per-frequency scale.
    X: ndarray (M, F, N) or SpectrogramTensor
        Microphone signals.
    ref: int
        Index of the reference microphone.

    Returns
    -------
    ndarray (K, F, N), the rescaled signals ``c_kf * y_kfn``.
    """
    Y = np.asarray(Y)
    X = np.asarray(_data(X))
    if Y.ndim != 3 or X.ndim != 3 or Y.shape[1:] != X.shape[1:]:
        raise InvalidInputError(f"shape mismatch between {Y.shape} and {X.shape}")
    x_ref = X[ref]
    num = np.sum(x_ref[None] * np.conj(Y), axis=2)
    den = np.maximum(np.sum(np.abs(Y) ** 2, axis=2), floor)
    return (num / den)[:, :, None] * Y
