"""Rank-based Cramer-von Mises tests of multivariate independence."""

__version__ = "0.1.0"
