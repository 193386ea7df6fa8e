"""Equilibrium seeking with learned personalized incentives."""

__version__ = "0.1.0"
