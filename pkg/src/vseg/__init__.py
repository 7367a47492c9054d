"""Patch-based retinal vessel segmentation with a from-scratch fully convolutional network."""

__version__ = "0.1.0"
