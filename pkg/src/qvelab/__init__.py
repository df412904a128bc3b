"""Numerical toolkit for quadratic vector equations and Wigner-type random matrices."""

__version__ = "0.1.0"
