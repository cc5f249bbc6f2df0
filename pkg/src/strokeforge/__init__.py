"""Stroke-based image reconstruction with a dual polyline/Bezier stroke model."""

__version__ = "0.1.0"
