"""Preference-driven disentangled voice privacy filter."""

__version__ = "0.1.0"
