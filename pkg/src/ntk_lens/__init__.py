"""Empirical neural tangent kernel observables for small dense networks."""

__version__ = "0.1.0"
