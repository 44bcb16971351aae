"""Hierarchical text classification with text-label alignment."""

__version__ = "0.1.0"
