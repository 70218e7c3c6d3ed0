"""Subgraph generator, connectivity loss, mutual-information estimator and extraction.

The objective for one batch of graphs is

    total = l_cls + alpha * l_con + beta * l_mi

where ``l_cls`` classifies the soft subgraph embedding, ``l_con`` pushes the
assignment toward a compact hard partition, and ``l_mi`` is the Donsker-Varadhan
lower bound on the dependence between graphs and their subgraph embeddings.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import DomainError, ShapeError
from .gnn import GcnEncoder, Mlp, Module, classify, encode, sum_readout
from .graph_data import Graph, connected_components
from .numerics import (
    Matrix,
    Parameter,
    add,
    constant,
    cross_entropy,
    frobenius_norm,
    hstack,
    log_mean_exp,
    matmul,
    mean_all,
    mean_squared_error,
    row_normalize,
    rowwise_softmax,
    scale,
    sub,
    take_row,
    transpose,
    vstack,
)

logger = logging.getLogger(__name__)

IDENTITY_2 = np.eye(2)


class SubgraphGenerator(Module):
    """Shared GCN encoder followed by an MLP producing two logits per node."""

    def __init__(self, encoder: GcnEncoder, rng: Optional[np.random.Generator] = None,
                 hidden: Optional[int] = None, head: Optional[Mlp] = None):
        self.encoder = encoder
        width = encoder.out_dim
        self.head = head or Mlp("generator", [width, hidden or width, 2], rng)
        if self.head.in_dim != width or self.head.out_dim != 2:
            raise ShapeError(f"generator head must map {width} -> 2, got {self.head.dims}")

    def parameters(self) -> List[Parameter]:
        return self.encoder.parameters() + self.head.parameters()

    def logits(self, g: Graph, node_embeddings: Optional[Matrix] = None) -> Tuple[Matrix, Matrix]:
        x = node_embeddings if node_embeddings is not None else encode(g, self.encoder)
        return self.head(x), x


class StatisticsNetwork(Mlp):
    """Witness MLP scoring a concatenated (graph, subgraph) embedding pair."""

    def __init__(self, hidden: int, rng: Optional[np.random.Generator] = None,
                 inner: Optional[int] = None, name: str = "statistics"):
        super().__init__(name, [2 * hidden, inner or hidden, 1], rng)


@dataclass
class SibLossBreakdown:
    """Loss components of one batch; ``total`` recomposes from the parts."""
    l_cls: float
    l_con: float
    l_mi: float
    alpha: float
    beta: float

    @property
    def total(self) -> float:
        return self.l_cls + self.alpha * self.l_con + self.beta * self.l_mi

    def to_dict(self) -> Dict[str, float]:
        return {"l_cls": self.l_cls, "l_con": self.l_con, "l_mi": self.l_mi, "total": self.total}


def generate_assignment(g: Graph, gen: SubgraphGenerator, node_embeddings: Optional[Matrix] = None) -> Matrix:
    """Row-stochastic n x 2 assignment; column 0 is the membership probability."""
    logits, _ = gen.logits(g, node_embeddings)
    return rowwise_softmax(logits)


def gumbel_noise(shape: Tuple[int, int], rng: np.random.Generator, eps: float = 1e-20) -> np.ndarray:
    u = rng.random(shape)
    return -np.log(-np.log(u + eps) + eps)


def gumbel_assignment(g: Graph, gen: SubgraphGenerator, tau: float, rng: np.random.Generator,
                      node_embeddings: Optional[Matrix] = None) -> Matrix:
    """Relaxed sample softmax((logits + Gumbel noise) / tau) per row."""
    if tau <= 0:
        raise DomainError(f"temperature must be positive, got {tau}")
    logits, _ = gen.logits(g, node_embeddings)
    noisy = add(logits, constant(gumbel_noise(logits.shape, rng)))
    return rowwise_softmax(scale(noisy, 1.0 / tau))


def subgraph_embedding(s: Matrix, x: Matrix) -> Matrix:
    """First row of Sᵀ X: the membership-weighted sum of node embeddings (1 x h)."""
    if s.rows != x.rows:
        raise ShapeError(f"assignment has {s.rows} rows but embeddings have {x.rows}")
    return take_row(matmul(transpose(s), x), 0)


def connectivity_loss(s: Matrix, adjacency) -> Matrix:
    """‖row_normalize(Sᵀ A S) − I₂‖_F on the raw adjacency."""
    a = constant(adjacency.adjacency if isinstance(adjacency, Graph) else adjacency)
    if a.rows != s.rows or a.cols != s.rows:
        raise ShapeError(f"adjacency {a.shape} does not match assignment {s.shape}")
    blocks = matmul(transpose(s), matmul(a, s))
    return frobenius_norm(sub(row_normalize(blocks), constant(IDENTITY_2)))


def graph_embedding(g: Graph, enc: GcnEncoder) -> Matrix:
    """Sum readout of the shared encoder (1 x h)."""
    return sum_readout(encode(g, enc))


def statistics_score(g: Graph, s_emb: Matrix, net: StatisticsNetwork, enc: GcnEncoder) -> Matrix:
    """Witness score for one (graph, subgraph embedding) pair."""
    g_emb = graph_embedding(g, enc)
    if g_emb.cols != s_emb.cols:
        raise ShapeError(f"graph embedding width {g_emb.cols} != subgraph embedding width {s_emb.cols}")
    return net(hstack([g_emb, s_emb]))


def dv_bound(graph_embs: Sequence[Matrix], sub_embs: Sequence[Matrix], net: StatisticsNetwork) -> Matrix:
    """Donsker-Varadhan bound mean(f(G_i, s_i)) − log mean exp f(G_i, s_(i+1) mod N)."""
    n = len(graph_embs)
    if n != len(sub_embs):
        raise ShapeError(f"{n} graph embeddings but {len(sub_embs)} subgraph embeddings")
    if n < 2:
        raise DomainError("the mutual-information bound needs at least two pairs")
    g_block = vstack(graph_embs)
    joint = net(hstack([g_block, vstack(sub_embs)]))
    shifted = [sub_embs[(i + 1) % n] for i in range(n)]
    marginal = net(hstack([g_block, vstack(shifted)]))
    return sub(mean_all(joint), log_mean_exp(marginal))


def mi_lower_bound(pairs: Sequence[Tuple[Graph, Matrix]], net: StatisticsNetwork, enc: GcnEncoder) -> Matrix:
    """L_MI over (graph, subgraph embedding) pairs using the shared encoder."""
    if len(pairs) < 2:
        raise DomainError("the mutual-information bound needs at least two pairs")
    graph_embs = [graph_embedding(g, enc) for g, _ in pairs]
    return dv_bound(graph_embs, [s for _, s in pairs], net)


def classification_loss(g: Graph, s: Matrix, clf: Mlp, x: Matrix, regression: bool = False) -> Matrix:
    """Cross-entropy (or squared error) of the classifier on the subgraph embedding."""
    if g.label is None:
        raise DomainError("classification loss needs a labelled graph")
    prediction = classify(subgraph_embedding(s, x), clf)
    if regression:
        return mean_squared_error(prediction, np.array([[float(g.label)]]))
    return cross_entropy(prediction, int(g.label))


@dataclass
class SubgraphSelection:
    """Nodes chosen for one graph plus their induced structure."""
    nodes: List[int]
    edges: List[Tuple[int, int]]
    largest_component: List[int]
    components: List[List[int]] = field(default_factory=list)
    empty: bool = False

    @property
    def size(self) -> int:
        return len(self.nodes)

    def membership(self, n: int) -> List[int]:
        flags = [0] * n
        for v in self.nodes:
            flags[v] = 1
        return flags

    def to_dict(self) -> Dict:
        return {
            "members": list(self.nodes),
            "largest_component": list(self.largest_component),
            "components": len(self.components),
            "empty": self.empty,
        }


def select_nodes(g: Graph, nodes: Sequence[int]) -> SubgraphSelection:
    """Build a SubgraphSelection from an explicit node set."""
    nodes = sorted(set(int(v) for v in nodes))
    chosen = set(nodes)
    edges = [(i, j) for i, j in g.edges if i in chosen and j in chosen]
    components = connected_components(g.adjacency, nodes) if nodes else []
    largest = max(components, key=len) if components else []
    return SubgraphSelection(nodes, edges, largest, components, empty=not nodes)


def extract_subgraph(g: Graph, s, threshold: Optional[float] = None) -> SubgraphSelection:
    """Hard selection from an assignment: argmax per row (ties not selected).

    With ``threshold`` set, node i is selected iff S[i, 0] > threshold.
    """
    values = np.asarray(s.data if isinstance(s, Matrix) else s, dtype=np.float64)
    if values.shape != (g.n, 2):
        raise ShapeError(f"assignment shape {values.shape} does not match ({g.n}, 2)")
    if threshold is None:
        chosen = np.nonzero(values[:, 0] > values[:, 1])[0]
    else:
        chosen = np.nonzero(values[:, 0] > threshold)[0]
    selection = select_nodes(g, chosen.tolist())
    if selection.empty:
        logger.warning(f"Empty subgraph selection on a {g.n}-node graph")
    return selection
