"""Structured-light stereo reconstruction and point-cloud force regression."""

__version__ = "0.1.0"
