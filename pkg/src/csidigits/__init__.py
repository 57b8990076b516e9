"""Digit recovery from WiFi CSI amplitude sequences.

Modules: ``model`` (data types and file formats), ``preprocess``,
``analysis`` (correlation and DTW), ``neural`` (numpy training engine),
``autoencoder``, ``tsnet`` (fused classifier), ``synth`` (labelled
synthetic captures) and ``cli``.
"""
from .errors import CsiError, DataError, NumericError

__version__ = "0.1.0"

__all__ = ["CsiError", "DataError", "NumericError", "__version__"]
