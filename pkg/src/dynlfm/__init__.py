"""Nonparametric latent factor models with persistent feature instances."""

__version__ = "0.1.0"
