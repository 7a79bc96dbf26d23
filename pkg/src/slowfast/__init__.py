"""Exponentially accurate slow manifolds by iterated graph refinement."""

__version__ = "0.1.0"
