"""Sparse-volume assembly, projection, pairing, losses and evaluation for posed 2D ICE sweeps."""

__version__ = "0.1.0"
