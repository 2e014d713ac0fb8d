"""Dynamical critical percolation at desk scale."""
__version__ = "0.1.0"
