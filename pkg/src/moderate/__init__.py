"""Moderately interacting particle systems: simulation, mild-form PDE solvers and rate experiments."""

__version__ = "0.1.0"
