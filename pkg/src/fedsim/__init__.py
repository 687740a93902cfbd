"""Deterministic federated-averaging simulator for small text classifiers."""

from .errors import ConfigError, FedsimError, TrainingDiverged

__version__ = "0.1.0"

__all__ = ["ConfigError", "FedsimError", "TrainingDiverged", "__version__"]
