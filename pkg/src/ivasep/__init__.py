"""Blind source separation with overdetermined independent vector analysis."""
from .auxiva import auxiva_run, pca_auxiva_run, pca_reduce, select_by_power
from .core import (
    DemixingState,
    InvalidInputError,
    NumericDegeneracyError,
    SeparationConfig,
    background_demix,
    compute_covariance,
    demix,
    negative_log_likelihood,
)
from .metrics import filtered_sdr, sdr_improvement, si_sdr
from .overiva import ive_run, overiva_run
from .pipeline import separate_audio, separate_spectrogram
from .scaling import projection_back
from .simulator import MixtureSpec, generate
from .stft import AudioBuffer, SpectrogramTensor, analyze, synthesize

__version__ = "0.1.0"
