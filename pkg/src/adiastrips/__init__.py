"""Holomorphic strips in T*L with adiabatic graph boundary conditions."""

__version__ = "0.1.0"
