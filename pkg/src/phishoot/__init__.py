"""Shooting solver for radial phi-Laplacian boundary value problems with nodal solutions."""

__version__ = "0.1.0"

__all__ = ["__version__"]
