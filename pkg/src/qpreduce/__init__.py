"""Numerics for quasi-periodic SL(2,R) cocycles and Schroedinger operators."""

__version__ = "0.1.0"
