"""Prediction-driven multi-agent clustering of temporal sequences."""

__version__ = "0.1.0"
