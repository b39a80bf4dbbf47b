"""PINN and shooting solvers for minimum threat-exposure paths."""

__version__ = "0.1.0"
