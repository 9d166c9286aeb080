"""Adaptive wavelet Galerkin solver for first-order system least squares."""

__version__ = "0.1.0"
