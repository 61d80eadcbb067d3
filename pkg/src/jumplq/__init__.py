"""Indefinite stochastic LQ control for linear jump-diffusions."""

__version__ = "0.1.0"
