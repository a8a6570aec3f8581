"""Stability and simulation toolkit for a four-hormone HPA-axis model with delays."""

__version__ = "0.1.0"
