"""Desk-scale active object localization with a learned latent world model."""

__version__ = "0.1.0"
