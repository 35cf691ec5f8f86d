"""Deringing of band-limited seismic gathers with a 9-layer CNN written in numpy."""

from .gather import Gather
from .model import ModelParams, ModelSpec, build_model, predict_gather
from .synthetics import SynthConfig, make_ringing, synth_gather

__all__ = [
    "Gather",
    "ModelParams",
    "ModelSpec",
    "SynthConfig",
    "build_model",
    "make_ringing",
    "predict_gather",
    "synth_gather",
]

__version__ = "0.1.0"
