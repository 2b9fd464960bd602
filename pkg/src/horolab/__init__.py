"""Numerical laboratory for stable/unstable Riccati solutions along geodesics."""

__version__ = "0.1.0"
