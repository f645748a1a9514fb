"""Pathology-aware image watermarking on synthetic medical phantoms."""

__version__ = "0.1.0"
