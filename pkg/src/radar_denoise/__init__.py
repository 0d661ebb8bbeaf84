"""LiDAR-supervised denoising of 4D radar point clouds."""

__version__ = "0.1.0"
