"""Polygenic selection on the hypercube: exact operators, simulation and mean-field analysis."""

__version__ = "0.1.0"
