"""Desk-scale tool-use environment for Earth-observation agents."""

__version__ = "0.1.0"
