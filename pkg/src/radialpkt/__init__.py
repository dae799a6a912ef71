"""Projection-token Transformer reconstruction for undersampled golden-angle radial MRI."""

__version__ = "0.1.0"
