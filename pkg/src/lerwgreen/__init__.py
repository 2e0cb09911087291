"""Exact and Monte Carlo tools for the edge Green's function of loop-erased random walk."""

__version__ = "0.1.0"
