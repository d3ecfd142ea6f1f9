"""Quasi-static block construction tasks and graph-structured agents."""

__version__ = "0.1.0"
