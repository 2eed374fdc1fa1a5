"""Fractional Keller-Segel toolkit: spectral operators, fractional heat kernels,
mild-solution solvers, exponent feasibility and validation diagnostics."""

from .spectral import Field, Grid, SystemParams, VectorField

__all__ = ["Field", "Grid", "SystemParams", "VectorField"]
__version__ = "0.1.0"
