"""Spectral toolkit for the step-field magnetic Schroedinger model."""

__version__ = "0.1.0"
