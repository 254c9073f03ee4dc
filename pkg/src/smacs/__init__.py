"""Signed capability tokens guarding simulated smart contracts."""

__version__ = "0.1.0"
