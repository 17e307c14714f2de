"""Orthogonality-preserving gradient flows for Kohn-Sham-type energies."""

__version__ = "0.1.0"
