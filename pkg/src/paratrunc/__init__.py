"""Discrete parabolic Lipschitz truncation and caloric approximation toolkit."""

__version__ = "0.1.0"
