"""Trackerless freehand ultrasound reconstruction with long-term dependency."""

__version__ = "0.1.0"
