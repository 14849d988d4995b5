"""Numerical checks of torsion-function bounds under Robin and Dirichlet boundary conditions."""
__version__ = "0.1.0"
