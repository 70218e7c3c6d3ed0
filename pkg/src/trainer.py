"""Bi-level training of the subgraph information bottleneck and its baselines.

Each outer step first re-initializes the statistics network and ascends the
mutual-information bound on the current (detached) embeddings for ``inner_steps``
steps, then descends ``l_cls + alpha * l_con + beta * l_mi`` with the statistics
network frozen.
"""

import logging
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from tqdm import tqdm

from .config import TrainConfig
from .errors import ConfigError, DivergenceError, NonFiniteError
from .evaluation import Prediction, accuracy
from .gnn import (
    AttentionReadout,
    Classifier,
    GcnEncoder,
    all_parameters,
    attention_readout,
    classify,
    encode,
    mean_readout,
    sum_readout,
    topk_attention_subgraph,
)
from .graph_data import Dataset, Graph, drop_edges, kfold_splits
from .numerics import (
    Adam,
    Gradients,
    Matrix,
    Parameter,
    SGD,
    Tape,
    add,
    constant,
    cross_entropy,
    detach,
    mean_squared_error,
    scale,
    sgd_update,
)
from .sib import (
    SibLossBreakdown,
    StatisticsNetwork,
    SubgraphGenerator,
    classification_loss,
    connectivity_loss,
    dv_bound,
    extract_subgraph,
    generate_assignment,
    gumbel_assignment,
    select_nodes,
    subgraph_embedding,
)
from .telemetry import TraceRecord, TraceWriter

logger = logging.getLogger(__name__)


@dataclass
class ModelState:
    """All networks of one run, grouped as theta (generator), phi1 (classifier), phi2 (statistics)."""
    encoder: GcnEncoder
    generator: SubgraphGenerator
    classifier: Classifier
    statistics: StatisticsNetwork
    attention: Optional[AttentionReadout] = None
    task: str = "classification"
    mode: str = "sib"
    statistics_init: Dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def build(cls, feature_dim: int, num_outputs: int, cfg: TrainConfig,
              task: str = "classification") -> "ModelState":
        """Seeded initialization; parameters are drawn in a fixed order."""
        rng = np.random.default_rng(cfg.seed)
        encoder = GcnEncoder.build(feature_dim, cfg.hidden, cfg.num_layers, rng)
        generator = SubgraphGenerator(encoder, rng)
        classifier = Classifier(cfg.hidden, num_outputs, rng)
        statistics = StatisticsNetwork(cfg.hidden, rng)
        attention = AttentionReadout(cfg.hidden, rng) if cfg.mode == "att" else None
        state = cls(encoder, generator, classifier, statistics, attention, task, cfg.mode)
        state.statistics_init = statistics.snapshot()
        return state

    @property
    def regression(self) -> bool:
        return self.task == "regression"

    @property
    def theta(self) -> List[Parameter]:
        return self.generator.parameters()

    @property
    def phi1(self) -> List[Parameter]:
        return all_parameters(m for m in (self.classifier, self.attention) if m is not None)

    @property
    def phi2(self) -> List[Parameter]:
        return self.statistics.parameters()

    def trainable(self) -> List[Parameter]:
        """Parameters descended by the outer step."""
        if self.mode == "sib":
            return self.theta + self.phi1
        return self.encoder.parameters() + self.phi1

    def parameters(self) -> List[Parameter]:
        return self.theta + self.phi1 + self.phi2

    def named_arrays(self) -> Dict[str, np.ndarray]:
        return {p.name: np.array(p.data) for p in self.parameters()}

    def load_arrays(self, values: Dict[str, np.ndarray]) -> None:
        for param in self.parameters():
            if param.name in values:
                param.assign(values[param.name])


@dataclass
class BatchEmbeddings:
    """Forward pass of a batch through the generator."""
    node_embeddings: List[Matrix]
    assignments: List[Matrix]
    sub_embeddings: List[Matrix]
    graph_embeddings: List[Matrix]


@dataclass
class TrainResult:
    state: ModelState
    trace: List[TraceRecord]


@contextmanager
def _component(name: str) -> Iterator[None]:
    try:
        yield
    except NonFiniteError as e:
        if not hasattr(e, "component"):
            e.component = name
        raise


def graph_rng(seed: int, step: int, index: int) -> np.random.Generator:
    """Independent stream per (seed, step, graph) for Gumbel sampling."""
    return np.random.default_rng([seed, step, index])


def embed_batch(
    batch: Sequence[Graph],
    state: ModelState,
    relaxation: str = "softmax",
    tau: float = 1.0,
    rngs: Optional[Sequence[np.random.Generator]] = None,
) -> BatchEmbeddings:
    """Assignments, subgraph embeddings and sum-readout graph embeddings of a batch."""
    node_embs, assignments, sub_embs, graph_embs = [], [], [], []
    for idx, g in enumerate(batch):
        x = encode(g, state.encoder)
        if relaxation == "gumbel":
            rng = rngs[idx] if rngs is not None else np.random.default_rng(idx)
            s = gumbel_assignment(g, state.generator, tau, rng, node_embeddings=x)
        else:
            s = generate_assignment(g, state.generator, node_embeddings=x)
        node_embs.append(x)
        assignments.append(s)
        sub_embs.append(subgraph_embedding(s, x))
        graph_embs.append(sum_readout(x))
    return BatchEmbeddings(node_embs, assignments, sub_embs, graph_embs)


def inner_loop(
    graph_embs: Sequence[Matrix],
    sub_embs: Sequence[Matrix],
    net: StatisticsNetwork,
    steps: int,
    eta1: float,
    init_values: Optional[Dict[str, np.ndarray]] = None,
) -> List[float]:
    """Gradient ascent of the bound on the statistics network alone.

    Embeddings are detached so no gradient reaches the encoder or generator.

    Returns:
        Bound values before each step plus the final value (``steps + 1`` entries)
    """
    if steps < 1:
        raise ConfigError(f"inner_steps must be at least 1, got {steps}", key="inner_steps")
    if init_values is not None:
        net.load(init_values)
    g_const = [detach(e) for e in graph_embs]
    s_const = [detach(e) for e in sub_embs]
    params = net.parameters()
    trace: List[float] = []
    for _ in range(steps):
        with Tape() as tape:
            bound = dv_bound(g_const, s_const, net)
        trace.append(bound.item())
        sgd_update(params, tape.backward(bound), eta1, ascent=True)
    trace.append(dv_bound(g_const, s_const, net).item())
    return trace


def sib_loss(
    batch: Sequence[Graph],
    state: ModelState,
    alpha: float,
    beta: float,
    relaxation: str = "softmax",
    tau: float = 1.0,
    rngs: Optional[Sequence[np.random.Generator]] = None,
) -> Tuple[Matrix, Dict[str, Matrix]]:
    """Total loss of a batch and its components, recorded on the active tape."""
    if state.mode != "sib":
        with _component("l_cls"):
            l_cls = baseline_loss(batch, state)
        zero = constant(0.0)
        return l_cls, {"l_cls": l_cls, "l_con": zero, "l_mi": zero}

    with _component("l_cls"):
        emb = embed_batch(batch, state, relaxation, tau, rngs)
        cls_terms = [
            classification_loss(g, s, state.classifier, x, state.regression)
            for g, s, x in zip(batch, emb.assignments, emb.node_embeddings)
        ]
        l_cls = scale(_sum(cls_terms), 1.0 / len(batch))
    with _component("l_con"):
        con_terms = [connectivity_loss(s, g.adjacency) for g, s in zip(batch, emb.assignments)]
        l_con = scale(_sum(con_terms), 1.0 / len(batch))
    with _component("l_mi"):
        if len(batch) >= 2:
            l_mi = dv_bound(emb.graph_embeddings, emb.sub_embeddings, state.statistics)
        else:
            l_mi = constant(0.0)
    total = add(add(l_cls, scale(l_con, alpha)), scale(l_mi, beta))
    return total, {"l_cls": l_cls, "l_con": l_con, "l_mi": l_mi}


def _sum(terms: Sequence[Matrix]) -> Matrix:
    total = terms[0]
    for term in terms[1:]:
        total = add(total, term)
    return total


def baseline_loss(batch: Sequence[Graph], state: ModelState) -> Matrix:
    """Mean classification loss of the readout baselines (mean or attention)."""
    terms = []
    for g in batch:
        x = encode(g, state.encoder)
        if state.mode == "att":
            embedding, _ = attention_readout(x, state.attention)
        else:
            embedding = mean_readout(x)
        prediction = classify(embedding, state.classifier)
        if state.regression:
            terms.append(mean_squared_error(prediction, np.array([[float(g.label)]])))
        else:
            terms.append(cross_entropy(prediction, int(g.label)))
    return scale(_sum(terms), 1.0 / len(batch))


def outer_step(
    batch: Sequence[Graph],
    state: ModelState,
    alpha: float,
    beta: float,
    eta2: float,
    optimizer=None,
    relaxation: str = "softmax",
    tau: float = 1.0,
    rngs: Optional[Sequence[np.random.Generator]] = None,
) -> SibLossBreakdown:
    """One descent step on theta and phi1; the statistics network stays frozen."""
    with Tape() as tape:
        total, parts = sib_loss(batch, state, alpha, beta, relaxation, tau, rngs)
    grads = tape.backward(total)
    params = state.trainable()
    _check_gradients(grads, params)
    if optimizer is None:
        sgd_update(params, grads, eta2)
    else:
        optimizer.step(grads)
    return SibLossBreakdown(
        l_cls=parts["l_cls"].item(),
        l_con=parts["l_con"].item(),
        l_mi=parts["l_mi"].item(),
        alpha=alpha if state.mode == "sib" else 0.0,
        beta=beta if state.mode == "sib" else 0.0,
    )


def _check_gradients(grads: Gradients, params: Sequence[Parameter]) -> None:
    for param in params:
        if not np.all(np.isfinite(grads[param])):
            error = NonFiniteError(f"non-finite gradient for {param.name}")
            error.component = "gradient"
            raise error


def make_optimizer(state: ModelState, cfg: TrainConfig):
    if cfg.optimizer == "sgd":
        return SGD(state.trainable(), lr=cfg.eta2)
    return Adam(state.trainable(), lr=cfg.eta2)


def train(ds: Dataset, cfg: TrainConfig, trace_writer: Optional[TraceWriter] = None) -> TrainResult:
    """Run ``cfg.outer_steps`` outer steps on the train split.

    Args:
        ds: Dataset with a nonempty ``train`` split
        cfg: Validated training configuration
        trace_writer: Destination of per-step TraceRecords (in-memory if omitted)

    Returns:
        TrainResult holding the trained ModelState and the trace
    """
    train_idx = list(ds.splits.get("train", []))
    if not train_idx:
        raise ConfigError("training needs a nonempty train split", key="split")
    if cfg.mode == "sib" and len(train_idx) < 2:
        raise ConfigError("the mutual-information term needs at least two training graphs", key="split")
    val_idx = list(ds.splits.get("val", []))

    num_outputs = 1 if ds.is_regression else ds.meta.num_classes
    state = ModelState.build(ds.meta.feature_dim, num_outputs, cfg, ds.meta.task)
    optimizer = make_optimizer(state, cfg)
    writer = trace_writer or TraceWriter()
    batch_rng = np.random.default_rng([cfg.seed, 1])

    logger.info(f"Training mode={cfg.mode} on {len(train_idx)} graphs for {cfg.outer_steps} outer steps "
                f"(alpha={cfg.alpha}, beta={cfg.beta}, T={cfg.inner_steps})")

    for step in tqdm(range(1, cfg.outer_steps + 1), desc="Training", disable=not cfg.progress):
        if cfg.batch_size is None or cfg.batch_size >= len(train_idx):
            indices = train_idx
        else:
            indices = sorted(batch_rng.choice(train_idx, size=cfg.batch_size, replace=False).tolist())
        batch = [ds.graphs[i] for i in indices]
        if cfg.drop_edge > 0:
            batch = [drop_edges(g, cfg.drop_edge, batch_rng) for g in batch]
        rngs_for = lambda: [graph_rng(cfg.seed, step, i) for i in indices]  # noqa: E731

        try:
            mi_trace: List[float] = []
            if cfg.mode == "sib":
                with _component("l_mi"):
                    emb = embed_batch(batch, state, cfg.relaxation, cfg.tau, rngs_for())
                    init = state.statistics_init if cfg.reinit_statistics else None
                    mi_trace = inner_loop(emb.graph_embeddings, emb.sub_embeddings, state.statistics,
                                          cfg.inner_steps, cfg.eta1, init)
            breakdown = outer_step(batch, state, cfg.alpha, cfg.beta, cfg.eta2, optimizer,
                                   cfg.relaxation, cfg.tau, rngs_for())
        except NonFiniteError as e:
            raise DivergenceError(step, getattr(e, "component", "loss"), str(e)) from e

        val_acc = None
        if val_idx and not ds.is_regression and step % cfg.eval_every == 0:
            val_graphs = [ds.graphs[i] for i in val_idx]
            preds = predict(state, val_graphs, cfg)
            val_acc = accuracy([p.label for p in preds], [g.label for g in val_graphs])

        record = TraceRecord(step, breakdown.l_cls, breakdown.l_con, breakdown.l_mi, breakdown.total,
                             val_acc, mi_trace)
        writer.write(record)
        logger.debug(f"step {step}: cls={breakdown.l_cls:.4f} con={breakdown.l_con:.4f} "
                     f"mi={breakdown.l_mi:.4f} total={breakdown.total:.4f} val_acc={val_acc}")

    logger.info(f"Training finished after {cfg.outer_steps} steps")
    return TrainResult(state, list(writer.records))


def _hard_assignment(n: int, nodes: Sequence[int]) -> np.ndarray:
    hard = np.zeros((n, 2))
    hard[:, 1] = 1.0
    for v in nodes:
        hard[v] = [1.0, 0.0]
    return hard


def _decode(prediction: Matrix, regression: bool):
    if regression:
        return prediction.item()
    return int(np.argmax(prediction.data[0]))


def predict_graph(state: ModelState, g: Graph, threshold: Optional[float] = None,
                  att_ratio: float = 0.5) -> Prediction:
    """Label and subgraph for one graph; SIB classifies the hard selection."""
    x = encode(g, state.encoder)
    if state.mode == "gcn":
        selection = select_nodes(g, range(g.n))
        return Prediction(_decode(classify(mean_readout(x), state.classifier), state.regression), selection)
    if state.mode == "att":
        embedding, scores = attention_readout(x, state.attention)
        selection = select_nodes(g, topk_attention_subgraph(g, scores, att_ratio))
        label = _decode(classify(embedding, state.classifier), state.regression)
        return Prediction(label, selection, scores=np.array(scores.data[0]))
    s = generate_assignment(g, state.generator, node_embeddings=x)
    selection = extract_subgraph(g, s, threshold)
    hard = constant(_hard_assignment(g.n, selection.nodes))
    label = _decode(classify(subgraph_embedding(hard, x), state.classifier), state.regression)
    return Prediction(label, selection, assignment=np.array(s.data))


def predict(state: ModelState, graphs: Sequence[Graph], cfg: Optional[TrainConfig] = None) -> List[Prediction]:
    threshold = cfg.inference_threshold if cfg is not None else None
    ratio = cfg.att_ratio if cfg is not None else 0.5
    return [predict_graph(state, g, threshold, ratio) for g in graphs]


@dataclass
class CrossValidationResult:
    """Per-fold test accuracies with population mean and std."""
    fold_accuracies: List[float]
    frame: pd.DataFrame

    @property
    def mean(self) -> float:
        return float(np.mean(self.fold_accuracies))

    @property
    def std(self) -> float:
        return float(np.std(self.fold_accuracies))

    def to_dict(self) -> Dict:
        return {"folds": list(self.fold_accuracies), "mean": self.mean, "std": self.std}


def cross_validate(ds: Dataset, cfg: TrainConfig, folds: int = 10, fold_seed: Optional[int] = None,
                   progress: bool = False) -> CrossValidationResult:
    """Stratified k-fold protocol: train on k-2 folds, validate on one, test on one."""
    if ds.is_regression:
        raise ConfigError("cross-validation reports accuracy and needs a categorical dataset", key="task")
    splits = kfold_splits(ds, folds, cfg.seed if fold_seed is None else fold_seed)
    rows = []
    for fold, split in enumerate(tqdm(splits, desc="Folds", disable=not progress)):
        result = train(ds.with_splits(split), cfg)
        test_graphs = [ds.graphs[i] for i in split["test"]]
        preds = predict(result.state, test_graphs, cfg)
        acc = accuracy([p.label for p in preds], [g.label for g in test_graphs])
        rows.append({"fold": fold, "train": len(split["train"]), "test": len(split["test"]), "accuracy": acc})
        logger.info(f"Fold {fold + 1}/{folds}: accuracy {acc:.3f}")
    frame = pd.DataFrame(rows).set_index("fold")
    return CrossValidationResult(frame["accuracy"].tolist(), frame)
