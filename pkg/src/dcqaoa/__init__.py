"""Divide-and-conquer QAOA for weighted MaxCut with learned, capacity-aware partitioning."""

__version__ = "0.1.0"
