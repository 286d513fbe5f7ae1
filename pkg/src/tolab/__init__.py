"""Numerics for the two-phase fractional obstacle problem in the weighted extension picture."""

__version__ = "0.1.0"
