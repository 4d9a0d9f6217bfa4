"""Simulation and Monte Carlo checks for heavy-tailed moving-average random fields."""

__version__ = "0.1.0"
