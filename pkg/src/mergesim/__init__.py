"""Coordinated merging of connected automated vehicles on a scaled road network."""

__version__ = "0.1.0"
