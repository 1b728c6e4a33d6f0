"""Decentralized multi-agent job selection with a deterministic network simulator."""

__version__ = "0.1.0"
