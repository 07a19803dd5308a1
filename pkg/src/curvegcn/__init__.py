"""Closed-contour annotation: graph-convolutional control-point regression
with spline/polygon sampling, differentiable mask rendering, and local
human-in-the-loop correction."""

__version__ = "0.1.0"
