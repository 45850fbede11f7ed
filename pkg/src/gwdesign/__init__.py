"""Adaptive optimal design of groundwater surveys with dual-weighted acquisition."""

__version__ = "0.1.0"
