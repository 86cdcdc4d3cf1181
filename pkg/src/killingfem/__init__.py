"""Finite elements for near-isometric (approximate Killing) velocity fields in 2D."""

__version__ = "0.1.0"
