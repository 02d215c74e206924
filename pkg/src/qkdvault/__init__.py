"""Simulated BB84 key distribution feeding a one-time-pad encrypted vault."""

__version__ = "0.1.0"
