"""Offline optimization of tutoring assistance policies from randomized logs."""

__version__ = "0.1.0"
