"""Reduced order models for recovering inlet distributions from wake data."""

__version__ = "0.1.0"
