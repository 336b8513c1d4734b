"""Clickstream purchase prediction and shopper segmentation."""

__version__ = "0.1.0"
