"""Belief representations and value-of-information planning for mineral exploration."""

__version__ = "0.1.0"
