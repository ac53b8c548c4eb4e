"""Drone video geo-localization through bird's-eye views of fitted Gaussian scenes."""

__version__ = "0.1.0"
