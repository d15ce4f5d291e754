"""Numerical verification of comparison theorems for diffusions."""

__version__ = "0.1.0"
