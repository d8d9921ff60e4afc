"""Collaborative policy optimization for heterogeneous agents at desk scale."""

__version__ = "0.1.0"
