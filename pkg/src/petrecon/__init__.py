"""Desk-scale multi-dose low-dose PET reconstruction toolkit."""

__version__ = "0.1.0"

from . import ablate, config, metrics, models, nn, phantom, train

__all__ = ["ablate", "config", "metrics", "models", "nn", "phantom", "train",
           "__version__"]
