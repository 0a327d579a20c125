"""Heterogeneous graph learning: schemas, graph tensors, message passing, sampling."""

__version__ = "0.1.0"
