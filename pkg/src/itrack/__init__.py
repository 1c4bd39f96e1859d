"""Evaluation toolkit for interactive, prompt-driven object tracking."""

__version__ = "0.1.0"
