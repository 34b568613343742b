"""Averaged Green's functions and effective coefficients for random parabolic equations on Z^d."""

__version__ = "0.1.0"
