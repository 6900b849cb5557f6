"""Trace fitting and rate extraction.

Usage:
    from src.analysis import fit_trace, get_model

    result = fit_trace(trace)            # model chosen from the protocol tag
    model = get_model("exponential")
"""

from .fitting import (
    FitInputError,
    FitOptions,
    add_noise,
    fit_decaying_sinusoid,
    fit_double_exponential,
    fit_exponential,
    fit_trace,
    linear_fit,
    normalize_trace,
)
from .models import DecayModel, get_model


__all__ = [
    "FitInputError",
    "FitOptions",
    "DecayModel",
    "get_model",
    "add_noise",
    "fit_exponential",
    "fit_double_exponential",
    "fit_decaying_sinusoid",
    "fit_trace",
    "linear_fit",
    "normalize_trace",
]
