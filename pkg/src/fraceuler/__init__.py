"""Euler schemes for fractional SDEs and their asymptotic error laws."""

__version__ = "0.1.0"
