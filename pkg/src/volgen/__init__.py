"""Volumetric scene encoding, neural rendering, and diffusion over feature volumes."""

__version__ = "0.1.0"
