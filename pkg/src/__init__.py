"""Subgraph Information Bottleneck: GNN classifiers that explain themselves with subgraphs."""

__version__ = "0.1.0"
