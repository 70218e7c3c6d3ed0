"""Shared pytest fixtures: seeded random graphs and small synthetic datasets."""

from pathlib import Path
from typing import Optional

import numpy as np
import pytest

from src.config import TrainConfig, settings
from src.graph_data import Dataset, DatasetMeta, Graph, generate_planted_motif


def random_graph(rng: np.random.Generator, n: int, p: float = 0.4, feature_dim: int = 3,
                 label: Optional[int] = 0) -> Graph:
    """Erdős–Rényi graph with Gaussian node features."""
    upper = np.triu(rng.random((n, n)) < p, k=1).astype(float)
    adj = upper + upper.T
    return Graph(adj, rng.normal(size=(n, feature_dim)), label)


def random_dataset(seed: int, count: int = 6, min_nodes: int = 4, max_nodes: int = 8,
                   feature_dim: int = 3) -> Dataset:
    rng = np.random.default_rng(seed)
    graphs = [
        random_graph(rng, int(rng.integers(min_nodes, max_nodes + 1)), 0.4, feature_dim, label=i % 2)
        for i in range(count)
    ]
    return Dataset(graphs, DatasetMeta("RANDOM", feature_dim, 2))


def small_config(**overrides) -> TrainConfig:
    """Fast settings for unit tests."""
    values = dict(hidden=4, num_layers=2, inner_steps=2, outer_steps=2, eta1=0.05, eta2=0.01, seed=0)
    values.update(overrides)
    return TrainConfig(**values)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def toy_dataset():
    """Four graphs: two 4-cycles (label 0) and two 4-cliques (label 1)."""
    return generate_planted_motif(count=4, motif_size=4, noise_size=0, edge_prob=0.5, seed=3, name="TOY")


@pytest.fixture
def planted_small():
    return generate_planted_motif(count=12, motif_size=4, noise_size=4, edge_prob=0.3, seed=11, name="SMALL")


@pytest.fixture
def mutag_dir() -> Path:
    path = Path(settings.data_root) / "MUTAG"
    if not (path / "MUTAG_graph_indicator.txt").exists():
        pytest.skip(f"MUTAG not found under {settings.data_root}")
    return path
