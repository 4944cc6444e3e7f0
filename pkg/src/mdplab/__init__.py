"""Moderate deviations, exponential inequalities and their numerical checks
for bounded stationary sequences in a separable Hilbert space."""

__version__ = "0.1.0"
