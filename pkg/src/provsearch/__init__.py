"""Provenance-graph behavior search with order embeddings of process ego-graphs."""

__version__ = "0.1.0"
