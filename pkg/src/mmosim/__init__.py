"""Desk-scale multi-agent simulator of an extraction-shooter MMO economy."""

__version__ = "0.1.0"
