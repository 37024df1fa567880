"""Grasp quality and post-grasp displacement prediction on synthetic pinch data."""

__version__ = "0.1.0"
