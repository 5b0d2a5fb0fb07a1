"""Verifiable task programs with geometric supervision and closed-loop recovery for a simulated humanoid."""

__version__ = "0.1.0"
