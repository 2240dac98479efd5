"""Desk-scale simulator of a lensless eye-tracking pipeline and its accelerator."""

__version__ = "0.1.0"
