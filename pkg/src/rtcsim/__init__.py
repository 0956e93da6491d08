"""Trace-driven packet-level simulation lab for learned video congestion control."""

__version__ = "0.1.0"
