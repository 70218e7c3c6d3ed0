"""Graphs, TU-format datasets, synthetic corpora and graph transforms."""

import hashlib
import logging
import math
from collections import deque
from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path
from typing import Dict, List, Literal, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import ConfigError, DatasetFormatError, DomainError, ShapeError
from .numerics import Matrix

logger = logging.getLogger(__name__)

Label = Union[int, float]

SPLIT_NAMES = ("train", "val", "test")


@dataclass(frozen=True)
class TruthMask:
    """Ground-truth membership per node or per canonical edge."""
    kind: Literal["node", "edge"]
    values: np.ndarray

    def __post_init__(self):
        if self.kind not in ("node", "edge"):
            raise DomainError(f"truth mask kind must be 'node' or 'edge', got {self.kind!r}")
        values = np.asarray(self.values, dtype=bool).ravel()
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def count(self) -> int:
        return int(self.values.sum())


@dataclass(frozen=True, eq=False)
class Graph:
    """Undirected graph with node features, a graph label and optional ground truth.

    The adjacency matrix is dense, symmetric, 0/1 with an empty diagonal. Self-loops
    are only added inside ``normalize_adjacency``.
    """
    adjacency: np.ndarray
    features: np.ndarray
    label: Optional[Label] = None
    truth_mask: Optional[TruthMask] = None
    node_labels: Optional[np.ndarray] = None

    def __post_init__(self):
        adj = np.array(self.adjacency, dtype=np.float64)
        if adj.ndim != 2 or adj.shape[0] != adj.shape[1]:
            raise ShapeError(f"adjacency must be square, got shape {adj.shape}")
        if adj.shape[0] < 1:
            raise DomainError("a graph needs at least one node")
        if not np.array_equal(adj, adj.T):
            raise DomainError("adjacency must be symmetric")
        if np.any(np.diag(adj) != 0):
            raise DomainError("adjacency diagonal must be zero")
        if not np.all((adj == 0) | (adj == 1)):
            raise DomainError("adjacency entries must be 0 or 1")
        feats = np.array(self.features, dtype=np.float64)
        if feats.ndim == 1:
            feats = feats.reshape(-1, 1)
        if feats.shape[0] != adj.shape[0]:
            raise ShapeError(f"feature rows {feats.shape[0]} != node count {adj.shape[0]}")
        adj.setflags(write=False)
        feats.setflags(write=False)
        object.__setattr__(self, "adjacency", adj)
        object.__setattr__(self, "features", feats)
        if self.node_labels is not None:
            node_labels = np.asarray(self.node_labels, dtype=np.int64)
            object.__setattr__(self, "node_labels", node_labels)
        mask = self.truth_mask
        if mask is not None:
            expected = self.n if mask.kind == "node" else self.num_edges
            if mask.values.size != expected:
                raise ShapeError(f"{mask.kind} truth mask has {mask.values.size} entries, expected {expected}")

    @property
    def n(self) -> int:
        return self.adjacency.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    @property
    def num_edges(self) -> int:
        return int(np.triu(self.adjacency, k=1).sum())

    @cached_property
    def edges(self) -> List[Tuple[int, int]]:
        """Canonical undirected edges (i < j) in row-major order."""
        rows, cols = np.nonzero(np.triu(self.adjacency, k=1))
        return [(int(i), int(j)) for i, j in zip(rows, cols)]

    @cached_property
    def norm_adjacency(self) -> Matrix:
        return normalize_adjacency(self)

    def degrees(self) -> np.ndarray:
        return self.adjacency.sum(axis=1).astype(np.int64)

    def node_truth(self) -> Optional[np.ndarray]:
        """Node-level ground truth, if the graph carries a node mask."""
        if self.truth_mask is not None and self.truth_mask.kind == "node":
            return self.truth_mask.values
        return None

    def induced(self, nodes: Sequence[int]) -> "Graph":
        """Subgraph induced by ``nodes`` (kept in ascending order)."""
        keep = sorted(set(int(v) for v in nodes))
        if not keep:
            raise DomainError("cannot induce a subgraph on an empty node set")
        adj = self.adjacency[np.ix_(keep, keep)]
        mask = None
        truth = self.node_truth()
        if truth is not None:
            mask = TruthMask("node", truth[keep])
        node_labels = self.node_labels[keep] if self.node_labels is not None else None
        return Graph(adj, self.features[keep], self.label, mask, node_labels)

    def permute(self, perm: Sequence[int]) -> "Graph":
        """Relabel nodes so that new node ``k`` is old node ``perm[k]``."""
        perm = np.asarray(perm, dtype=np.int64)
        if sorted(perm.tolist()) != list(range(self.n)):
            raise DomainError("perm must be a permutation of the node indices")
        adj = self.adjacency[np.ix_(perm, perm)]
        mask = None
        if self.truth_mask is not None:
            if self.truth_mask.kind == "node":
                mask = TruthMask("node", self.truth_mask.values[perm])
            else:
                old = {edge: bool(v) for edge, v in zip(self.edges, self.truth_mask.values)}
                mask = TruthMask("edge", [old[_ordered(perm[i], perm[j])] for i, j in _canonical_edges(adj)])
        node_labels = self.node_labels[perm] if self.node_labels is not None else None
        return Graph(adj, self.features[perm], self.label, mask, node_labels)

    def with_label(self, label: Label) -> "Graph":
        return replace(self, label=label)


def _ordered(i: int, j: int) -> Tuple[int, int]:
    i, j = int(i), int(j)
    return (i, j) if i < j else (j, i)


def _canonical_edges(adjacency: np.ndarray) -> List[Tuple[int, int]]:
    rows, cols = np.nonzero(np.triu(adjacency, k=1))
    return [(int(i), int(j)) for i, j in zip(rows, cols)]


def graph_from_edges(n: int, edges: Sequence[Tuple[int, int]], features: Optional[np.ndarray] = None,
                     label: Optional[Label] = None, truth_mask: Optional[TruthMask] = None) -> Graph:
    """Build a graph from 0-based undirected edges; features default to a constant 1."""
    adj = np.zeros((n, n))
    for i, j in edges:
        if i == j:
            continue
        adj[i, j] = adj[j, i] = 1.0
    if features is None:
        features = np.ones((n, 1))
    return Graph(adj, features, label, truth_mask)


@dataclass
class DatasetMeta:
    """Descriptive metadata of a dataset."""
    name: str
    feature_dim: int
    num_classes: int
    task: Literal["classification", "regression"] = "classification"
    label_values: List[Label] = field(default_factory=list)
    node_label_values: List[int] = field(default_factory=list)
    line_graph: bool = False

    def to_dict(self) -> Dict:
        return {
            "name": self.name,
            "feature_dim": self.feature_dim,
            "num_classes": self.num_classes,
            "task": self.task,
            "label_values": list(self.label_values),
            "node_label_values": list(self.node_label_values),
            "line_graph": self.line_graph,
        }

    @classmethod
    def from_dict(cls, data: Dict) -> "DatasetMeta":
        return cls(**data)


@dataclass
class Dataset:
    """Ordered graphs plus train/val/test index lists."""
    graphs: List[Graph]
    meta: DatasetMeta
    splits: Dict[str, List[int]] = field(default_factory=dict)

    def __post_init__(self):
        seen: set = set()
        for name, indices in self.splits.items():
            for idx in indices:
                if not 0 <= idx < len(self.graphs):
                    raise DomainError(f"split '{name}' references graph {idx} of {len(self.graphs)}")
                if idx in seen:
                    raise DomainError(f"graph {idx} appears in more than one split")
                seen.add(idx)
        if self.meta.task == "classification":
            for idx, g in enumerate(self.graphs):
                if g.label is not None and not 0 <= int(g.label) < self.meta.num_classes:
                    raise DomainError(f"graph {idx} label {g.label} outside {self.meta.num_classes} classes")

    def __len__(self) -> int:
        return len(self.graphs)

    def __getitem__(self, idx: int) -> Graph:
        return self.graphs[idx]

    @property
    def is_regression(self) -> bool:
        return self.meta.task == "regression"

    def subset(self, split: str) -> List[Graph]:
        if split == "all":
            return list(self.graphs)
        if split not in self.splits:
            raise ConfigError(f"Unknown split '{split}'", key="split")
        return [self.graphs[i] for i in self.splits[split]]

    def with_splits(self, splits: Dict[str, List[int]]) -> "Dataset":
        return Dataset(self.graphs, self.meta, {k: list(v) for k, v in splits.items()})

    def map_graphs(self, fn, **meta_updates) -> "Dataset":
        graphs = [fn(g) for g in self.graphs]
        meta = replace(self.meta, **meta_updates)
        if graphs:
            meta.feature_dim = graphs[0].feature_dim
        return Dataset(graphs, meta, {k: list(v) for k, v in self.splits.items()})

    def fingerprint(self) -> str:
        """sha256 over adjacency, feature and label content."""
        digest = hashlib.sha256()
        digest.update(self.meta.name.encode("utf-8"))
        for g in self.graphs:
            digest.update(np.int64(g.n).tobytes())
            digest.update(np.ascontiguousarray(g.adjacency).tobytes())
            digest.update(np.ascontiguousarray(g.features).tobytes())
            digest.update(repr(g.label).encode("utf-8"))
            if g.truth_mask is not None:
                digest.update(g.truth_mask.kind.encode("utf-8"))
                digest.update(g.truth_mask.values.tobytes())
        return digest.hexdigest()

    def label_counts(self) -> Dict[Label, int]:
        counts: Dict[Label, int] = {}
        for g in self.graphs:
            counts[g.label] = counts.get(g.label, 0) + 1
        return dict(sorted(counts.items(), key=lambda kv: kv[0]))


# ---------------------------------------------------------------------------
# TU format
# ---------------------------------------------------------------------------

def _tu_path(directory: Path, name: str, suffix: str) -> Path:
    return directory / f"{name}_{suffix}.txt"


def _read_lines(path: Path) -> List[Tuple[int, str]]:
    """Non-empty stripped lines with their 1-based line numbers."""
    with open(path, "r", encoding="utf-8") as f:
        return [(no, line.strip()) for no, line in enumerate(f, start=1) if line.strip()]


def _parse_int(text: str, path: Path, line_no: int) -> int:
    try:
        return int(text.strip())
    except ValueError as e:
        raise DatasetFormatError(f"expected an integer, got {text.strip()!r}", path.name, line_no) from e


def _parse_number(text: str, path: Path, line_no: int) -> float:
    try:
        return float(text.strip())
    except ValueError as e:
        raise DatasetFormatError(f"expected a number, got {text.strip()!r}", path.name, line_no) from e


def discover_dataset_name(directory: Path) -> str:
    """Find NAME from the single ``NAME_graph_indicator.txt`` in ``directory``."""
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"Dataset directory not found: {directory}")
    candidates = sorted(directory.glob("*_graph_indicator.txt"))
    if not candidates:
        raise FileNotFoundError(f"No *_graph_indicator.txt file in {directory}")
    if len(candidates) > 1:
        raise DatasetFormatError(f"several datasets in {directory}: {[c.name for c in candidates]}")
    return candidates[0].name[: -len("_graph_indicator.txt")]


def parse_tu_dataset(directory: Union[str, Path], name: Optional[str] = None) -> Dataset:
    """Load a TU-format dataset directory.

    Args:
        directory: Directory holding the ``NAME_*.txt`` files
        name: Dataset name; discovered from the graph indicator file when omitted

    Returns:
        Dataset with no splits assigned
    """
    directory = Path(directory)
    name = name or discover_dataset_name(directory)

    required = {suffix: _tu_path(directory, name, suffix) for suffix in ("A", "graph_indicator", "graph_labels")}
    for path in required.values():
        if not path.exists():
            raise FileNotFoundError(f"Missing dataset file: {path}")

    # Graph membership of every node
    indicator_path = required["graph_indicator"]
    graph_of_node: List[int] = []
    previous = 0
    for line_no, text in _read_lines(indicator_path):
        gid = _parse_int(text, indicator_path, line_no)
        if gid != previous and gid != previous + 1:
            raise DatasetFormatError(
                f"graph ids must be contiguous and ascending from 1, got {gid} after {previous}",
                indicator_path.name, line_no,
            )
        previous = gid
        graph_of_node.append(gid - 1)
    total_nodes = len(graph_of_node)
    num_graphs = previous
    if num_graphs == 0:
        raise DatasetFormatError("graph indicator is empty", indicator_path.name)

    node_offset = np.zeros(num_graphs + 1, dtype=np.int64)
    for gid in graph_of_node:
        node_offset[gid + 1] += 1
    node_offset = np.cumsum(node_offset)

    # Graph labels
    labels_path = required["graph_labels"]
    label_rows = _read_lines(labels_path)
    label_lines = [no for no, _ in label_rows]
    raw_labels = [text for _, text in label_rows]
    if len(raw_labels) != num_graphs:
        raise DatasetFormatError(f"expected {num_graphs} graph labels, found {len(raw_labels)}", labels_path.name)
    task: Literal["classification", "regression"] = "classification"
    try:
        int_labels = [int(text) for text in raw_labels]
    except ValueError:
        int_labels = None
        task = "regression"
    if int_labels is not None:
        label_values: List[Label] = sorted(set(int_labels))
        remap = {value: idx for idx, value in enumerate(label_values)}
        labels: List[Label] = [remap[v] for v in int_labels]
    else:
        labels = [_parse_number(text, labels_path, no) for no, text in zip(label_lines, raw_labels)]
        label_values = []

    # Adjacency
    edge_path = required["A"]
    adjacency = [np.zeros((node_offset[g + 1] - node_offset[g],) * 2) for g in range(num_graphs)]
    self_loops = 0
    for line_no, text in _read_lines(edge_path):
        parts = text.split(",")
        if len(parts) != 2:
            raise DatasetFormatError(f"expected 'i, j', got {text!r}", edge_path.name, line_no)
        i = _parse_int(parts[0], edge_path, line_no)
        j = _parse_int(parts[1], edge_path, line_no)
        for node in (i, j):
            if not 1 <= node <= total_nodes:
                raise DatasetFormatError(
                    f"node index {node} out of range 1..{total_nodes}", edge_path.name, line_no
                )
        gi, gj = graph_of_node[i - 1], graph_of_node[j - 1]
        if gi != gj:
            raise DatasetFormatError(f"edge ({i}, {j}) joins graphs {gi + 1} and {gj + 1}", edge_path.name, line_no)
        if i == j:
            self_loops += 1
            continue
        li, lj = i - 1 - node_offset[gi], j - 1 - node_offset[gi]
        adjacency[gi][li, lj] = adjacency[gi][lj, li] = 1.0
    if self_loops:
        logger.warning(f"Dropped {self_loops} self-loop(s) from {edge_path.name}")

    # Node labels -> one-hot, node attributes -> appended columns
    node_label_path = _tu_path(directory, name, "node_labels")
    node_labels: Optional[np.ndarray] = None
    node_label_values: List[int] = []
    blocks: List[np.ndarray] = []
    if node_label_path.exists():
        lines = _read_lines(node_label_path)
        if len(lines) != total_nodes:
            raise DatasetFormatError(f"expected {total_nodes} node labels, found {len(lines)}", node_label_path.name)
        node_labels = np.array([_parse_int(text, node_label_path, no) for no, text in lines], dtype=np.int64)
        node_label_values = sorted(set(node_labels.tolist()))
        column = {value: idx for idx, value in enumerate(node_label_values)}
        onehot = np.zeros((total_nodes, len(node_label_values)))
        onehot[np.arange(total_nodes), [column[v] for v in node_labels]] = 1.0
        blocks.append(onehot)

    attr_path = _tu_path(directory, name, "node_attributes")
    if attr_path.exists():
        lines = _read_lines(attr_path)
        if len(lines) != total_nodes:
            raise DatasetFormatError(f"expected {total_nodes} attribute rows, found {len(lines)}", attr_path.name)
        rows = [[_parse_number(part, attr_path, no) for part in text.split(",")] for no, text in lines]
        if len({len(r) for r in rows}) != 1:
            raise DatasetFormatError("node attribute rows differ in length", attr_path.name)
        blocks.append(np.array(rows))

    features = np.hstack(blocks) if blocks else np.ones((total_nodes, 1))

    masks = _read_truth_masks(_tu_path(directory, name, "truth_mask"), adjacency, node_offset)

    graphs: List[Graph] = []
    for g in range(num_graphs):
        lo, hi = node_offset[g], node_offset[g + 1]
        graphs.append(Graph(
            adjacency[g],
            features[lo:hi],
            labels[g],
            masks[g] if masks else None,
            node_labels[lo:hi] if node_labels is not None else None,
        ))

    num_classes = len(label_values) if task == "classification" else 1
    meta = DatasetMeta(name, features.shape[1], num_classes, task, label_values, node_label_values)
    logger.info(f"Loaded {name}: {num_graphs} graphs, {total_nodes} nodes, "
                f"{num_classes if task == 'classification' else 'scalar'} classes")
    return Dataset(graphs, meta)


def _read_truth_masks(path: Path, adjacency: List[np.ndarray], node_offset: np.ndarray) -> Optional[List[TruthMask]]:
    if not path.exists():
        return None
    lines = _read_lines(path)
    if not lines:
        raise DatasetFormatError("truth mask file is empty", path.name)
    kind = lines[0][1].lower()
    if kind not in ("node", "edge"):
        raise DatasetFormatError(f"truth mask header must be 'node' or 'edge', got {kind!r}", path.name, lines[0][0])
    values = []
    for no, text in lines[1:]:
        value = _parse_int(text, path, no)
        if value not in (0, 1):
            raise DatasetFormatError(f"truth mask values must be 0 or 1, got {value}", path.name, no)
        values.append(bool(value))
    sizes = [adj.shape[0] if kind == "node" else int(np.triu(adj, k=1).sum()) for adj in adjacency]
    if sum(sizes) != len(values):
        raise DatasetFormatError(f"truth mask has {len(values)} entries, expected {sum(sizes)}", path.name)
    masks, start = [], 0
    for size in sizes:
        masks.append(TruthMask(kind, values[start:start + size]))
        start += size
    return masks


def write_tu_dataset(ds: Dataset, directory: Union[str, Path], name: Optional[str] = None) -> Path:
    """Write ``ds`` as a TU-format directory that parse_tu_dataset reads back identically."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    name = name or ds.meta.name

    edge_lines, indicator_lines, label_lines, node_label_lines, attr_lines = [], [], [], [], []
    mask_lines: List[str] = []
    mask_kinds = {g.truth_mask.kind for g in ds.graphs if g.truth_mask is not None}
    if len(mask_kinds) > 1:
        raise DomainError("graphs mix node and edge truth masks")
    has_mask = bool(mask_kinds) and all(g.truth_mask is not None for g in ds.graphs)
    has_node_labels = all(g.node_labels is not None for g in ds.graphs)
    n_onehot = len(ds.meta.node_label_values) if has_node_labels else 0
    has_attributes = ds.meta.feature_dim > n_onehot and not _constant_feature(ds, n_onehot)

    offset = 0
    for gid, g in enumerate(ds.graphs, start=1):
        rows, cols = np.nonzero(g.adjacency)
        for i, j in sorted(zip(rows.tolist(), cols.tolist())):
            edge_lines.append(f"{i + 1 + offset}, {j + 1 + offset}")
        indicator_lines.extend([str(gid)] * g.n)
        if ds.is_regression:
            label_lines.append(repr(float(g.label)))
        else:
            label_value = ds.meta.label_values[int(g.label)] if ds.meta.label_values else int(g.label)
            label_lines.append(str(label_value))
        if has_node_labels:
            node_label_lines.extend(str(int(v)) for v in g.node_labels)
        if has_attributes:
            for row in g.features[:, n_onehot:]:
                attr_lines.append(", ".join(repr(float(v)) for v in row))
        if has_mask:
            mask_lines.extend("1" if v else "0" for v in g.truth_mask.values)
        offset += g.n

    _write_lines(_tu_path(directory, name, "A"), edge_lines)
    _write_lines(_tu_path(directory, name, "graph_indicator"), indicator_lines)
    _write_lines(_tu_path(directory, name, "graph_labels"), label_lines)
    if has_node_labels:
        _write_lines(_tu_path(directory, name, "node_labels"), node_label_lines)
    if has_attributes:
        _write_lines(_tu_path(directory, name, "node_attributes"), attr_lines)
    if has_mask:
        _write_lines(_tu_path(directory, name, "truth_mask"), [mask_kinds.pop()] + mask_lines)
    logger.info(f"Wrote {len(ds)} graphs to {directory} as {name}")
    return directory


def _constant_feature(ds: Dataset, n_onehot: int) -> bool:
    if n_onehot:
        return False
    return all(g.features.shape[1] == 1 and np.all(g.features == 1.0) for g in ds.graphs)


def _write_lines(path: Path, lines: Sequence[str]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for line in lines:
            f.write(line + "\n")


# ---------------------------------------------------------------------------
# Synthetic data
# ---------------------------------------------------------------------------

def _motif_edges(size: int, kind: str) -> List[Tuple[int, int]]:
    if kind == "cycle":
        return [(i, (i + 1) % size) for i in range(size)]
    return [(i, j) for i in range(size) for j in range(i + 1, size)]


def _planted_graph(motif_size: int, motif_kind: str, noise_size: int, edge_prob: float,
                   rng: np.random.Generator, max_degree_label: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    n = motif_size + noise_size
    adj = np.zeros((n, n))
    for i, j in _motif_edges(motif_size, motif_kind):
        adj[i, j] = adj[j, i] = 1.0
    for i in range(motif_size, n):
        for j in range(i + 1, n):
            if rng.random() < edge_prob:
                adj[i, j] = adj[j, i] = 1.0
    # every noise component hangs off the motif by one attachment edge
    if noise_size:
        noise = adj[motif_size:, motif_size:]
        for component in connected_components(noise):
            anchor = motif_size + int(rng.choice(component))
            target = int(rng.integers(motif_size))
            adj[anchor, target] = adj[target, anchor] = 1.0
    truth = np.zeros(n, dtype=bool)
    truth[:motif_size] = True
    perm = rng.permutation(n)
    adj = adj[np.ix_(perm, perm)]
    truth = truth[perm]
    degree = np.minimum(adj.sum(axis=1).astype(np.int64), max_degree_label)
    return adj, truth, degree


def generate_planted_motif(
    count: int,
    motif_size: int,
    noise_size: int,
    edge_prob: float,
    seed: int,
    task: Literal["classification", "regression"] = "classification",
    name: str = "PLANTED",
    max_degree_label: int = 6,
) -> Dataset:
    """Cycle-vs-clique corpus with a known motif in every graph.

    Graph ``k`` carries label ``k % 2``: 0 embeds a ``motif_size`` cycle, 1 a clique.
    The regression variant draws the motif size per graph from [3, motif_size] and uses
    it as the label. Node labels are degrees capped at ``max_degree_label``; features
    one-hot encode the node-label values that occur in the corpus, the same encoding
    parse_tu_dataset produces.
    """
    if motif_size < 3:
        raise DomainError(f"motif_size must be at least 3, got {motif_size}")
    if not 0.0 < edge_prob < 1.0:
        raise DomainError(f"edge_prob must lie in (0, 1), got {edge_prob}")
    if count < 1 or noise_size < 0:
        raise DomainError("count must be positive and noise_size nonnegative")

    rng = np.random.default_rng(seed)
    raw = []
    for k in range(count):
        kind = "cycle" if k % 2 == 0 else "clique"
        size = motif_size
        label: Label = k % 2
        if task == "regression":
            size = int(rng.integers(3, motif_size + 1))
            label = float(size)
        adj, truth, degree = _planted_graph(size, kind, noise_size, edge_prob, rng, max_degree_label)
        raw.append((adj, truth, degree, label))

    node_label_values = sorted({int(v) for _, _, degree, _ in raw for v in degree})
    column = {value: idx for idx, value in enumerate(node_label_values)}
    width = len(node_label_values)
    graphs: List[Graph] = []
    for adj, truth, degree, label in raw:
        features = np.zeros((adj.shape[0], width))
        features[np.arange(adj.shape[0]), [column[int(v)] for v in degree]] = 1.0
        graphs.append(Graph(adj, features, label, TruthMask("node", truth), degree))

    if task == "regression":
        meta = DatasetMeta(name, width, 1, "regression", [], node_label_values)
    else:
        meta = DatasetMeta(name, width, 2, "classification", [0, 1], node_label_values)
    logger.info(f"Generated {count} planted-motif graphs (motif={motif_size}, noise={noise_size}, seed={seed})")
    return Dataset(graphs, meta)


def _count(fraction: float, total: int, rounding) -> int:
    return int(rounding(round(fraction * total, 9)))


def add_redundant_edges(g: Graph, fraction: float, seed: Union[int, np.random.Generator]) -> Graph:
    """Insert ceil(fraction * |E|) new edges among non-edges; flag original edges true."""
    if fraction < 0:
        raise DomainError(f"fraction must be nonnegative, got {fraction}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    original = set(g.edges)
    wanted = _count(fraction, len(original), math.ceil)
    non_edges = [(i, j) for i in range(g.n) for j in range(i + 1, g.n) if (i, j) not in original]
    if wanted > len(non_edges):
        logger.warning(f"Requested {wanted} redundant edges but only {len(non_edges)} non-edges exist")
        wanted = len(non_edges)
    adj = np.array(g.adjacency)
    if wanted:
        for idx in sorted(rng.choice(len(non_edges), size=wanted, replace=False).tolist()):
            i, j = non_edges[idx]
            adj[i, j] = adj[j, i] = 1.0
    mask = TruthMask("edge", [edge in original for edge in _canonical_edges(adj)])
    return Graph(adj, g.features, g.label, mask, g.node_labels)


def drop_edges(g: Graph, fraction: float, seed: Union[int, np.random.Generator]) -> Graph:
    """Remove floor(fraction * |E|) uniformly chosen edges (DropEdge)."""
    if not 0.0 <= fraction <= 1.0:
        raise DomainError(f"fraction must lie in [0, 1], got {fraction}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    edges = g.edges
    k = _count(fraction, len(edges), math.floor)
    if k == 0:
        return g
    adj = np.array(g.adjacency)
    removed = set()
    for idx in rng.choice(len(edges), size=k, replace=False).tolist():
        i, j = edges[idx]
        adj[i, j] = adj[j, i] = 0.0
        removed.add((i, j))
    mask = g.truth_mask
    if mask is not None and mask.kind == "edge":
        mask = TruthMask("edge", [v for e, v in zip(edges, mask.values) if e not in removed])
    return Graph(adj, g.features, g.label, mask, g.node_labels)


def add_redundant_edges_dataset(ds: Dataset, fraction: float, seed: int) -> Dataset:
    """Corrupt every graph of ``ds``; one generator stream in graph order."""
    rng = np.random.default_rng(seed)
    corrupted = ds.map_graphs(lambda g: add_redundant_edges(g, fraction, rng))
    logger.info(f"Added {fraction:.0%} redundant edges to {len(ds)} graphs")
    return corrupted


def line_graph(g: Graph) -> Graph:
    """One node per canonical edge; line nodes adjacent iff their edges share an endpoint."""
    edges = g.edges
    m = len(edges)
    if m == 0:
        raise DomainError("line graph of an edgeless graph is undefined")
    incident: Dict[int, List[int]] = {}
    for idx, (i, j) in enumerate(edges):
        incident.setdefault(i, []).append(idx)
        incident.setdefault(j, []).append(idx)
    adj = np.zeros((m, m))
    for members in incident.values():
        for a in range(len(members)):
            for b in range(a + 1, len(members)):
                adj[members[a], members[b]] = adj[members[b], members[a]] = 1.0
    features = np.hstack([g.features[[i for i, _ in edges]], g.features[[j for _, j in edges]]])

    mask = None
    if g.truth_mask is not None:
        if g.truth_mask.kind == "edge":
            mask = TruthMask("node", g.truth_mask.values)
        else:
            truth = g.truth_mask.values
            mask = TruthMask("node", [bool(truth[i] and truth[j]) for i, j in edges])
    return Graph(adj, features, g.label, mask)


def line_graph_dataset(ds: Dataset) -> Dataset:
    graphs = []
    for idx, g in enumerate(ds.graphs):
        if g.num_edges == 0:
            raise DomainError(f"graph {idx} has no edges; cannot build its line graph")
        graphs.append(line_graph(g))
    meta = replace(ds.meta, feature_dim=2 * ds.meta.feature_dim, line_graph=True, node_label_values=[])
    return Dataset(graphs, meta, {k: list(v) for k, v in ds.splits.items()})


def normalize_adjacency(g: Union[Graph, np.ndarray]) -> Matrix:
    """Symmetric normalization D^-1/2 (A + I) D^-1/2 of the self-looped adjacency."""
    adj = g.adjacency if isinstance(g, Graph) else np.asarray(g, dtype=np.float64)
    a_hat = adj + np.eye(adj.shape[0])
    inv_sqrt = 1.0 / np.sqrt(a_hat.sum(axis=1))
    return Matrix(inv_sqrt[:, None] * a_hat * inv_sqrt[None, :])


def connected_components(adjacency: np.ndarray, nodes: Optional[Sequence[int]] = None) -> List[List[int]]:
    """Connected components by breadth-first traversal, restricted to ``nodes`` if given.

    Components are returned with sorted members, ordered by their smallest node.
    """
    adjacency = np.asarray(adjacency)
    allowed = set(range(adjacency.shape[0])) if nodes is None else set(int(v) for v in nodes)
    visited: set = set()
    components: List[List[int]] = []
    for start in sorted(allowed):
        if start in visited:
            continue
        queue = deque([start])
        visited.add(start)
        members = []
        while queue:
            v = queue.popleft()
            members.append(v)
            for w in np.nonzero(adjacency[v])[0].tolist():
                if w in allowed and w not in visited:
                    visited.add(w)
                    queue.append(w)
        components.append(sorted(members))
    return components


# ---------------------------------------------------------------------------
# Splits
# ---------------------------------------------------------------------------

def _stratified_order(ds: Dataset, rng: np.random.Generator) -> List[int]:
    order = rng.permutation(len(ds)).tolist()
    if ds.is_regression:
        return order
    groups: Dict[Label, List[int]] = {}
    for idx in order:
        groups.setdefault(ds.graphs[idx].label, []).append(idx)
    # interleave classes proportionally so every contiguous slice keeps the label mix
    keyed = []
    for members in groups.values():
        size = len(members)
        keyed.extend(((pos + 0.5) / size, idx) for pos, idx in enumerate(members))
    keyed.sort(key=lambda kv: kv[0])
    return [idx for _, idx in keyed]


def split_dataset(ds: Dataset, fractions: Sequence[float], seed: int) -> Dataset:
    """Seeded, label-stratified train/val/test split into contiguous slices."""
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3:
        raise ConfigError("split needs exactly three fractions", key="split")
    if any(f < 0 for f in fractions) or sum(fractions) > 1.0 + 1e-9:
        raise ConfigError(f"split fractions must be nonnegative and sum to at most 1, got {fractions}", key="split")
    rng = np.random.default_rng(seed)
    order = _stratified_order(ds, rng)
    total = len(order)
    counts = [int(round(f * total)) for f in fractions]
    for name, fraction, count in zip(SPLIT_NAMES, fractions, counts):
        if fraction > 0 and count == 0:
            raise ConfigError(f"split '{name}' is empty for fraction {fraction} of {total} graphs", key="split")
    overflow = sum(counts) - total
    if overflow > 0:
        counts[0] -= overflow
    splits, start = {}, 0
    for name, count in zip(SPLIT_NAMES, counts):
        splits[name] = sorted(order[start:start + count])
        start += count
    return ds.with_splits(splits)


def kfold_splits(ds: Dataset, k: int, seed: int) -> List[Dict[str, List[int]]]:
    """Stratified k folds; fold i is the test set, fold (i+1) mod k validates."""
    if k < 2 or k > len(ds):
        raise ConfigError(f"k must lie in [2, {len(ds)}], got {k}", key="folds")
    rng = np.random.default_rng(seed)
    order = _stratified_order(ds, rng)
    folds = [sorted(order[i::k]) for i in range(k)]
    result = []
    for i in range(k):
        val_fold = (i + 1) % k
        train = sorted(idx for f, members in enumerate(folds) if f not in (i, val_fold) for idx in members)
        result.append({"train": train, "val": list(folds[val_fold]), "test": list(folds[i])})
    return result


def prepare_dataset(
    directory: Union[str, Path],
    redundant: Optional[float] = None,
    line_graph_view: bool = False,
    seed: int = 0,
) -> Dataset:
    """Load a TU directory and apply the denoising transforms in a fixed order.

    Redundant edges (if requested) are inserted first, then every graph is replaced
    by its line graph, so original-edge ground truth becomes node ground truth.
    """
    ds = parse_tu_dataset(directory)
    if redundant:
        ds = add_redundant_edges_dataset(ds, redundant, seed)
    if line_graph_view:
        ds = line_graph_dataset(ds)
        logger.info(f"Converted {len(ds)} graphs to line graphs (feature width {ds.meta.feature_dim})")
    return ds
