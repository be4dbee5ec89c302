"""Monocular scene flow from piecewise-planar rigid bodies and probabilistic single-view depth."""

__version__ = "0.1.0"
