"""Bi-covering numbers of sampled pair-metric spaces and the machinery around them."""

__version__ = "0.1.0"
