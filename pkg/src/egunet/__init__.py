"""Endmember-guided two-stream hyperspectral unmixing."""

__version__ = "0.1.0"
