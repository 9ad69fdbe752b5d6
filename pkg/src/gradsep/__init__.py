"""Gradient-aware open-set separation for prompt-tuned classifiers operating
on precomputed feature embeddings."""

from . import core, data, encoders, experiment, metrics, separation, training

__all__ = ["core", "data", "encoders", "experiment", "metrics", "separation",
           "training"]
__version__ = "0.1.0"
