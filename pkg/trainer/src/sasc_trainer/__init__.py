"""Trainer for sasc prior network weights.

Trains a small residual convolutional denoiser on degraded/clean patch pairs
and exports it in the "SASCPRN1" weight format the sasc package loads. The
trainer talks to the restoration package only through that file format and
the installed command line; nothing here imports sasc.
"""

from .spec import TrainSpec, load_spec
from .data import list_images, load_image, sample_patches
from .model import build_model, export_weights, weights_to_bytes
from .train import TrainingDivergedError, train_prior

__all__ = [
    "TrainSpec",
    "load_spec",
    "list_images",
    "load_image",
    "sample_patches",
    "build_model",
    "export_weights",
    "weights_to_bytes",
    "TrainingDivergedError",
    "train_prior",
]

__version__ = "0.1.0"
