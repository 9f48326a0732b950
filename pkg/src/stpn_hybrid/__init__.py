"""Hybrid transient analysis of stochastic time Petri nets."""

__version__ = "0.1.0"
