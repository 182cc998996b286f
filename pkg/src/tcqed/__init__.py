"""Cavity-QED spectroscopy of transmon arrays coupled to one resonator."""

__version__ = "0.1.0"
