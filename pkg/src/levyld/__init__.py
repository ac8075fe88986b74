"""Numerical laboratory for large deviations of a degenerate jump semigroup."""

__version__ = "0.1.0"
