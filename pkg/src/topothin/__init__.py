"""Filtered topological thinning (lambda-skeleton) of 2D grayscale images."""

from .image import GrayImage, Point

__version__ = "0.1.0"

__all__ = ["GrayImage", "Point", "__version__"]
