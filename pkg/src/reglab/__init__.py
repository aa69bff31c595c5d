"""Simulation and numerical analysis of locally regulated branching diffusions on lattices."""
__version__ = "0.1.0"
