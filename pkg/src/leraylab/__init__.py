"""Numerical laboratory for Leray's construction of Navier-Stokes solutions."""

__version__ = "0.1.0"

from . import analysis, fields, kernels, nse, stokes, structure  # noqa: E402

__all__ = ["analysis", "fields", "kernels", "nse", "stokes", "structure"]
