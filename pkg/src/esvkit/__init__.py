"""Ecosystem service valuation, land-change and driver analytics."""

__version__ = "0.1.0"
