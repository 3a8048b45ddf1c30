"""Hierarchical plane-enhanced scene graphs from multi-view point maps."""

__version__ = "0.1.0"
