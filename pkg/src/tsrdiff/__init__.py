"""Confidence-guided residual-shifting diffusion for blind text-image super-resolution."""

__version__ = "0.1.0"
