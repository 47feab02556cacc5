"""Bayesian compositional mediation analysis with spike-and-slab selection."""

__version__ = "0.1.0"
