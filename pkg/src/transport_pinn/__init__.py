"""PINN and asymptotic-preserving solvers for the 1D linear transport equation."""

__version__ = "0.1.0"
