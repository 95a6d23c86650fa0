"""Continuous pain-intensity estimation from facial landmarks and images."""

__version__ = "0.1.0"
