"""Skeleton-based action recognition with residual networks on RGB-encoded sequences."""

__version__ = "0.1.0"
