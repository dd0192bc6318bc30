"""Measurement-based wide-area damping control for interarea oscillations."""

__version__ = "0.1.0"
