"""Numerical checks for infinite-horizon approximation of multistable flows."""

__version__ = "0.1.0"
