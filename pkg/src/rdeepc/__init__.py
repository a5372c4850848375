"""Efficient recursive data-enabled predictive control."""

__version__ = "0.1.0"
