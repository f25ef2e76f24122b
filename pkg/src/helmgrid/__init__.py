"""Holomorphic embedding power flow, sigma indices and weak-bus ranking."""

__version__ = "0.1.0"
