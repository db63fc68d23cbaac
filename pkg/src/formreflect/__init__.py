"""Reflection of metrics and differential forms across a chart boundary, with numerical verifiers."""

__version__ = "0.1.0"
