import numpy as np
import pytest

ACCEPTANCE_LINES = []


def crandn(rng, *shape):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)


def random_mixture(seed, n_chan=4, n_src=2, n_freq=33, n_frames=128, background=0.1):
    """
    Random spectrogram following the OverIVA signal model: ``n_src``
    sources with frame-varying variance shared across frequencies, plus a
    stationary Gaussian background spanning the remaining dimensions.
    """
    rng = np.random.default_rng(seed)
    env = np.exp(rng.standard_normal((n_src, 1, n_frames)))
    S = crandn(rng, n_src, n_freq, n_frames) * env
    Z = crandn(rng, n_chan - n_src, n_freq, n_frames) * np.sqrt(background)
    A = crandn(rng, n_freq, n_chan, n_src)
    Psi = crandn(rng, n_freq, n_chan, n_chan - n_src)
    return np.einsum("fmk,kfn->mfn", A, S) + np.einsum("fmk,kfn->mfn", Psi, Z)


def random_hpd(rng, n, batch=()):
    A = crandn(rng, *batch, n, 2 * n)
    return A @ np.conj(np.swapaxes(A, -1, -2)) / (2 * n)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
