"""Numerical laboratory for lattice Schrodinger operators with decaying disorder."""

__version__ = "0.1.0"
