"""Sparse-view CT reconstruction and learned streak-artifact removal."""

__version__ = "0.1.0"
