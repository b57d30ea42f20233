"""Finite-element tools for multiscale Landau-Lifshitz-Gilbert dynamics."""

__version__ = "0.1.0"
