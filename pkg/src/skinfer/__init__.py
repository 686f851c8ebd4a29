"""Correlated pseudo-marginal inference for time-discretised stochastic kinetic models."""

__version__ = "0.1.0"
