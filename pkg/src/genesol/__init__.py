"""Numerical laboratory for energy-variational and measure-valued solutions."""

__version__ = "0.1.0"
