"""Deterministic closed-loop multi-agent cooperative driving benchmark harness."""

__version__ = "0.1.0"
