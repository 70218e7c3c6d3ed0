"""GCN encoder, MLP heads and the self-attention readout."""

import logging
import math
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .errors import DomainError, ShapeError
from .graph_data import Graph
from .numerics import (
    Matrix,
    Parameter,
    add,
    constant,
    matmul,
    relu,
    rowwise_softmax,
    sum_rows,
    tanh_act,
    transpose,
)

logger = logging.getLogger(__name__)


class Module:
    """Holds named parameters; subclasses list them in ``parameters()``."""

    def parameters(self) -> List[Parameter]:
        raise NotImplementedError

    def named_parameters(self) -> Dict[str, Parameter]:
        return {p.name: p for p in self.parameters()}

    def snapshot(self) -> Dict[str, np.ndarray]:
        return {p.name: np.array(p.data) for p in self.parameters()}

    def load(self, values: Dict[str, np.ndarray]) -> None:
        for param in self.parameters():
            if param.name in values:
                param.assign(values[param.name])


class Mlp(Module):
    """Fully connected layers with ReLU between them; the output layer is linear."""

    def __init__(self, name: str, dims: Sequence[int], rng: Optional[np.random.Generator] = None):
        if len(dims) < 2:
            raise ShapeError(f"an MLP needs at least input and output widths, got {list(dims)}")
        self.name = name
        self.dims = list(dims)
        rng = rng or np.random.default_rng(0)
        self.weights: List[Parameter] = []
        self.biases: List[Parameter] = []
        for layer, (fan_in, fan_out) in enumerate(zip(dims[:-1], dims[1:])):
            self.weights.append(Parameter.uniform(f"{name}.W{layer}", fan_in, fan_out, rng))
            self.biases.append(Parameter.uniform(f"{name}.b{layer}", 1, fan_out, rng, fan_in=fan_in))

    @classmethod
    def from_weights(cls, name: str, weights: Sequence, biases: Optional[Sequence] = None) -> "Mlp":
        """Build an MLP with explicit weights (zero biases unless given)."""
        weights = [np.atleast_2d(np.asarray(w, dtype=np.float64)) for w in weights]
        dims = [weights[0].shape[0]] + [w.shape[1] for w in weights]
        mlp = Mlp(name, dims)
        for layer, w in enumerate(weights):
            mlp.weights[layer].assign(w)
            b = np.zeros((1, w.shape[1])) if biases is None else biases[layer]
            mlp.biases[layer].assign(np.reshape(b, (1, w.shape[1])))
        return mlp

    @property
    def in_dim(self) -> int:
        return self.dims[0]

    @property
    def out_dim(self) -> int:
        return self.dims[-1]

    def parameters(self) -> List[Parameter]:
        params: List[Parameter] = []
        for w, b in zip(self.weights, self.biases):
            params.extend([w, b])
        return params

    def __call__(self, x: Matrix) -> Matrix:
        if x.cols != self.in_dim:
            raise ShapeError(f"{self.name}: input width {x.cols} does not match {self.in_dim}")
        h = x
        last = len(self.weights) - 1
        for layer, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = add(matmul(h, w), b)
            if layer < last:
                h = relu(h)
        return h


class Classifier(Mlp):
    """Maps a 1xh graph embedding to class logits (or one scalar for regression)."""

    def __init__(self, in_dim: int, out_dim: int, rng: Optional[np.random.Generator] = None,
                 hidden: Optional[int] = None, name: str = "classifier"):
        hidden = in_dim if hidden is None else hidden
        super().__init__(name, [in_dim, hidden, out_dim], rng)


class GcnEncoder(Module):
    """Stacked graph convolutions ReLU(Â X W); ReLU is kept on the last layer too."""

    def __init__(self, dims: Sequence[int], rng: Optional[np.random.Generator] = None, name: str = "encoder"):
        if len(dims) < 2:
            raise ShapeError(f"encoder needs at least one layer, got dims {list(dims)}")
        rng = rng or np.random.default_rng(0)
        self.name = name
        self.dims = list(dims)
        self.layers: List[Parameter] = [
            Parameter.uniform(f"{name}.W{layer}", fan_in, fan_out, rng)
            for layer, (fan_in, fan_out) in enumerate(zip(dims[:-1], dims[1:]))
        ]

    @classmethod
    def build(cls, in_dim: int, hidden: int, num_layers: int, rng: np.random.Generator,
              name: str = "encoder") -> "GcnEncoder":
        return cls([in_dim] + [hidden] * num_layers, rng, name)

    @classmethod
    def from_weights(cls, weights: Sequence, name: str = "encoder") -> "GcnEncoder":
        weights = [np.atleast_2d(np.asarray(w, dtype=np.float64)) for w in weights]
        enc = cls([weights[0].shape[0]] + [w.shape[1] for w in weights], name=name)
        for param, w in zip(enc.layers, weights):
            param.assign(w)
        return enc

    @property
    def in_dim(self) -> int:
        return self.dims[0]

    @property
    def out_dim(self) -> int:
        return self.dims[-1]

    def parameters(self) -> List[Parameter]:
        return list(self.layers)


def encode(g: Graph, enc: GcnEncoder) -> Matrix:
    """Node embeddings after every encoder layer (n x h)."""
    if g.feature_dim != enc.in_dim:
        raise ShapeError(f"feature width {g.feature_dim} does not match encoder input {enc.in_dim}")
    a_norm = g.norm_adjacency
    h = constant(g.features)
    for w in enc.layers:
        h = relu(matmul(a_norm, matmul(h, w)))
    return h


class AttentionReadout(Module):
    """Self-attention pooling scores softmax(Φ2ᵀ tanh(Φ1ᵀ Xᵀ)) over the nodes."""

    def __init__(self, hidden: int, rng: Optional[np.random.Generator] = None, name: str = "attention",
                 inner: Optional[int] = None):
        rng = rng or np.random.default_rng(0)
        inner = hidden if inner is None else inner
        self.name = name
        self.phi1 = Parameter.uniform(f"{name}.Phi1", hidden, inner, rng)
        self.phi2 = Parameter.uniform(f"{name}.Phi2", inner, 1, rng)

    @classmethod
    def from_weights(cls, phi1, phi2, name: str = "attention") -> "AttentionReadout":
        phi1 = np.atleast_2d(np.asarray(phi1, dtype=np.float64))
        phi2 = np.asarray(phi2, dtype=np.float64).reshape(phi1.shape[1], 1)
        att = cls(phi1.shape[0], name=name, inner=phi1.shape[1])
        att.phi1.assign(phi1)
        att.phi2.assign(phi2)
        return att

    def parameters(self) -> List[Parameter]:
        return [self.phi1, self.phi2]


def attention_readout(x: Matrix, att: AttentionReadout) -> Tuple[Matrix, Matrix]:
    """Return (1xh embedding, 1xn normalized scores)."""
    if x.cols != att.phi1.rows:
        raise ShapeError(f"embedding width {x.cols} does not match attention width {att.phi1.rows}")
    logits = transpose(matmul(tanh_act(matmul(x, att.phi1)), att.phi2))
    scores = rowwise_softmax(logits)
    return matmul(scores, x), scores


def topk_attention_subgraph(g: Graph, scores, ratio: float) -> List[int]:
    """ceil(ratio * n) highest-scoring nodes, ties going to the lower index; sorted."""
    if not 0.0 < ratio <= 1.0:
        raise DomainError(f"ratio must lie in (0, 1], got {ratio}")
    values = np.asarray(scores.data if isinstance(scores, Matrix) else scores, dtype=np.float64).ravel()
    if values.size != g.n:
        raise ShapeError(f"got {values.size} scores for {g.n} nodes")
    k = max(1, math.ceil(ratio * g.n - 1e-9))
    order = sorted(range(g.n), key=lambda i: (-values[i], i))
    return sorted(order[:k])


def mean_readout(x: Matrix) -> Matrix:
    """Average node embedding (1xh)."""
    return matmul(constant(np.full((1, x.rows), 1.0 / x.rows)), x)


def sum_readout(x: Matrix) -> Matrix:
    return sum_rows(x)


def classify(embedding: Matrix, clf: Mlp) -> Matrix:
    """Logits (1xC) for categorical tasks or a 1x1 prediction for regression."""
    if embedding.cols != clf.in_dim:
        raise ShapeError(f"embedding width {embedding.cols} does not match classifier input {clf.in_dim}")
    return clf(embedding)


def all_parameters(modules: Iterable[Module]) -> List[Parameter]:
    params: List[Parameter] = []
    for module in modules:
        params.extend(module.parameters())
    return params
