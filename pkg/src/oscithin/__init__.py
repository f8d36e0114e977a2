"""Thin domains with oscillating boundaries.

Cell problems and homogenized coefficients, the one-dimensional limit
problem, finite-element solvers on the thin domain and comparison studies.
"""
__version__ = "0.1.0"
