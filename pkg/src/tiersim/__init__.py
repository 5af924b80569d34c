"""Trace-driven simulator for memory/SSD/HDD tier management policies."""

__version__ = "0.1.0"
