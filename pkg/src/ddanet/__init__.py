"""Distributed dual averaging over networks: simulation, bounds and experiments."""

__version__ = "0.1.0"
