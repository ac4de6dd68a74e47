"""Closed-loop human-robot collaboration workbench."""

__version__ = "0.1.0"
