"""Numerical laboratory for perturbed sine-Gordon kinks and their virtual solitary manifold."""

__version__ = "0.1.0"
