"""Familiar-stranger detection and encounter analytics for call detail records."""

__version__ = "0.1.0"
