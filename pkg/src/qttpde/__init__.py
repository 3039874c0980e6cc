"""Quantized tensor-train solver toolkit for 1D reaction-diffusion problems."""

__version__ = "0.1.0"
