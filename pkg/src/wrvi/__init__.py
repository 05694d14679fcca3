"""Weighted-residual variational inference for parametric PDE emulators."""

__version__ = "0.1.0"
