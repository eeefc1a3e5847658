"""Velocity-grid solver and functional-inequality lab for the linear Boltzmann equation."""

__version__ = "0.1.0"
