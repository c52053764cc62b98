"""Fooling finite concept classes with synthetic distributions, sequentially
and under differential privacy."""

__version__ = "0.1.0"
