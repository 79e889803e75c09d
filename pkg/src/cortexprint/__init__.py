"""Cortical morphological fingerprints from flattened surface features."""

__version__ = "0.1.0"
