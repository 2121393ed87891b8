"""Behavioral constraints for deep RL agents via normalised Lagrange multipliers."""

__version__ = "0.1.0"
