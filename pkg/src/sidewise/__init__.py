"""Sidewise observability laboratory: rays, boundary classification, SGCC checks and wave sweeps."""

__version__ = "0.1.0"
