"""Depth recovery and grasp planning for transparent objects from refractive flow."""

__version__ = "0.1.0"
