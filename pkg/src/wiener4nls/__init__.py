"""Pseudospectral simulation and Monte Carlo checks for the randomized fourth-order derivative NLS."""

__version__ = "0.1.0"
