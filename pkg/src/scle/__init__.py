"""Stochastic c-number Langevin ensembles for open two-level and few-level systems."""

__version__ = "0.1.0"
