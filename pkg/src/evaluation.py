"""Metrics for classification, planted-structure recovery and subgraph shape."""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Union

import numpy as np
from rich.console import Console
from rich.table import Table

from .errors import DomainError
from .graph_data import Graph, Label, TruthMask, connected_components
from .sib import SubgraphSelection

logger = logging.getLogger(__name__)


@dataclass
class Prediction:
    """Model output for one graph."""
    label: Label
    selection: SubgraphSelection
    assignment: Optional[np.ndarray] = None
    scores: Optional[np.ndarray] = None


@dataclass
class MeanStd:
    """Population mean and standard deviation."""
    mean: float
    std: float

    @classmethod
    def of(cls, values: Sequence[float]) -> "MeanStd":
        values = np.asarray(list(values), dtype=np.float64)
        if values.size == 0:
            raise DomainError("mean and std need at least one value")
        return cls(float(values.mean()), float(values.std()))

    def to_dict(self) -> Dict[str, float]:
        return {"mean": self.mean, "std": self.std}

    def __str__(self) -> str:
        return f"{self.mean:.3f} ± {self.std:.3f}"


@dataclass
class PrecisionRecall:
    precision: float
    recall: float
    empty_selection: bool = False


@dataclass
class ComponentStats:
    count: int
    largest_fraction: float


@dataclass
class SizeStats:
    """Percentages of graph size covered by selections and their largest parts."""
    size_pct: MeanStd
    largest_component_pct: MeanStd


@dataclass
class PropertyBias:
    mean: float
    std: float
    flagged: int = 0

    def to_dict(self) -> Dict[str, float]:
        return {"mean": self.mean, "std": self.std, "flagged": self.flagged}


def accuracy(preds: Sequence[Label], labels: Sequence[Label]) -> float:
    """Fraction of exact matches."""
    preds, labels = list(preds), list(labels)
    if not preds:
        raise DomainError("accuracy of an empty prediction list is undefined")
    if len(preds) != len(labels):
        raise DomainError(f"{len(preds)} predictions for {len(labels)} labels")
    return sum(1 for p, y in zip(preds, labels) if p == y) / len(preds)


def _truth_values(truth_mask) -> np.ndarray:
    if truth_mask is None:
        raise DomainError("precision/recall needs a truth mask")
    if isinstance(truth_mask, Graph):
        truth_mask = truth_mask.truth_mask
        if truth_mask is None:
            raise DomainError("graph has no truth mask")
    if isinstance(truth_mask, TruthMask):
        if truth_mask.kind != "node":
            raise DomainError("node precision/recall needs a node truth mask")
        return truth_mask.values
    return np.asarray(truth_mask, dtype=bool).ravel()


def node_pr(selected: Sequence[int], truth_mask) -> PrecisionRecall:
    """Precision and recall of a node set against ground truth.

    An empty selection has precision 0 and is flagged. Recall against an empty truth
    set is defined as 0.
    """
    truth = _truth_values(truth_mask)
    chosen = set(int(v) for v in selected)
    true_nodes = set(np.nonzero(truth)[0].tolist())
    hits = len(chosen & true_nodes)
    precision = hits / len(chosen) if chosen else 0.0
    recall = hits / len(true_nodes) if true_nodes else 0.0
    return PrecisionRecall(precision, recall, empty_selection=not chosen)


def random_baseline_pr(truth_mask, k: int) -> PrecisionRecall:
    """Expected precision/recall of k nodes drawn uniformly without replacement."""
    truth = _truth_values(truth_mask)
    n = truth.size
    if not 0 <= k <= n:
        raise DomainError(f"cannot draw {k} nodes from {n}")
    positives = int(truth.sum())
    precision = positives / n if k else 0.0
    recall = k / n if positives else 0.0
    return PrecisionRecall(precision, recall, empty_selection=k == 0)


def component_stats(g: Graph, selected: Sequence[int]) -> ComponentStats:
    """Connected parts of the induced selection and its largest part relative to n."""
    chosen = sorted(set(int(v) for v in selected))
    if not chosen:
        return ComponentStats(0, 0.0)
    components = connected_components(g.adjacency, chosen)
    return ComponentStats(len(components), max(len(c) for c in components) / g.n)


def _check_paired(graphs: Sequence[Graph], selections: Sequence[SubgraphSelection]) -> None:
    if len(graphs) != len(selections):
        raise DomainError(f"{len(selections)} selections for {len(graphs)} graphs")


def size_stats(graphs: Sequence[Graph], selections: Sequence[SubgraphSelection]) -> SizeStats:
    if not graphs:
        raise DomainError("size statistics need at least one graph")
    _check_paired(graphs, selections)
    sizes = [100.0 * sel.size / g.n for g, sel in zip(graphs, selections)]
    largest = [100.0 * len(sel.largest_component) / g.n for g, sel in zip(graphs, selections)]
    return SizeStats(MeanStd.of(sizes), MeanStd.of(largest))


def largest_component_size(sub: Graph) -> float:
    return float(sub.n)


def property_bias(
    graphs: Sequence[Graph],
    selections: Sequence[SubgraphSelection],
    property_fn: Callable[[Graph], float] = largest_component_size,
) -> PropertyBias:
    """|Y(G) − property(largest selected component)| over a split.

    Empty selections count with bias |Y(G)| and are flagged.
    """
    if not graphs:
        raise DomainError("property bias needs at least one graph")
    _check_paired(graphs, selections)
    biases, flagged = [], 0
    for g, sel in zip(graphs, selections):
        target = float(g.label)
        if not sel.largest_component:
            biases.append(abs(target))
            flagged += 1
            continue
        biases.append(abs(target - float(property_fn(g.induced(sel.largest_component)))))
    stats = MeanStd.of(biases)
    if flagged:
        logger.warning(f"{flagged} empty selection(s) counted with bias |Y|")
    return PropertyBias(stats.mean, stats.std, flagged)


def subgraph_iou(a: Sequence[int], b: Sequence[int]) -> float:
    """Intersection over union of two node sets; two empty sets agree fully."""
    sa, sb = set(a), set(b)
    union = sa | sb
    return len(sa & sb) / len(union) if union else 1.0


def selection_iou(first: Sequence[SubgraphSelection], second: Sequence[SubgraphSelection],
                  largest_only: bool = False) -> float:
    """Mean IoU between two runs' selections on the same graphs."""
    if len(first) != len(second) or not first:
        raise DomainError("selection lists must be nonempty and of equal length")
    pick = (lambda s: s.largest_component) if largest_only else (lambda s: s.nodes)
    return float(np.mean([subgraph_iou(pick(a), pick(b)) for a, b in zip(first, second)]))


def noise_fraction_inside(g: Graph, selection: SubgraphSelection) -> Optional[float]:
    """Fraction of selected nodes that are not ground-truth nodes."""
    truth = _truth_values(g.truth_mask)
    if selection.empty:
        return None
    return float(np.mean([not truth[v] for v in selection.nodes]))


def graph_noise_fraction(g: Graph) -> float:
    truth = _truth_values(g.truth_mask)
    return float(1.0 - truth.mean())


@dataclass
class MetricsRecord:
    """Metrics of one evaluated split; absent metrics stay None and are omitted."""
    count: int
    accuracy: Optional[float] = None
    mse: Optional[float] = None
    node_precision: Optional[float] = None
    node_recall: Optional[float] = None
    edge_precision: Optional[float] = None
    edge_recall: Optional[float] = None
    random_precision: Optional[float] = None
    random_recall: Optional[float] = None
    subgraph_size_pct: Optional[MeanStd] = None
    largest_component_pct: Optional[MeanStd] = None
    disconnected_parts: Optional[float] = None
    property_bias: Optional[PropertyBias] = None
    noise_inside: Optional[float] = None
    noise_graph: Optional[float] = None
    empty_selections: int = 0
    extra: Dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        data: Dict[str, Any] = {"count": self.count, "empty_selections": self.empty_selections}
        for key in ("accuracy", "mse", "node_precision", "node_recall", "edge_precision", "edge_recall",
                    "random_precision", "random_recall", "disconnected_parts", "noise_inside", "noise_graph"):
            value = getattr(self, key)
            if value is not None:
                data[key] = value
        for key in ("subgraph_size_pct", "largest_component_pct", "property_bias"):
            value = getattr(self, key)
            if value is not None:
                data[key] = value.to_dict()
        data.update(self.extra)
        return data


def evaluate_predictions(
    graphs: Sequence[Graph],
    predictions: Sequence[Prediction],
    regression: bool = False,
    line_graph: bool = False,
) -> MetricsRecord:
    """Aggregate every metric that the graphs' labels and truth masks support."""
    if not graphs:
        raise DomainError("cannot evaluate an empty split")
    if len(graphs) != len(predictions):
        raise DomainError(f"{len(predictions)} predictions for {len(graphs)} graphs")
    selections = [p.selection for p in predictions]
    record = MetricsRecord(count=len(graphs))
    record.empty_selections = sum(1 for s in selections if s.empty)

    labels = [g.label for g in graphs]
    if regression:
        errors = [(float(p.label) - float(y)) ** 2 for p, y in zip(predictions, labels)]
        record.mse = float(np.mean(errors))
        record.property_bias = property_bias(graphs, selections)
    else:
        record.accuracy = accuracy([p.label for p in predictions], labels)

    sizes = size_stats(graphs, selections)
    record.subgraph_size_pct = sizes.size_pct
    record.largest_component_pct = sizes.largest_component_pct
    record.disconnected_parts = float(np.mean([component_stats(g, s.nodes).count for g, s in zip(graphs, selections)]))

    if all(g.node_truth() is not None for g in graphs):
        pr = [node_pr(s.nodes, g.truth_mask) for g, s in zip(graphs, selections)]
        rnd = [random_baseline_pr(g.truth_mask, s.size) for g, s in zip(graphs, selections)]
        precision = float(np.mean([r.precision for r in pr]))
        recall = float(np.mean([r.recall for r in pr]))
        if line_graph:
            record.edge_precision, record.edge_recall = precision, recall
        else:
            record.node_precision, record.node_recall = precision, recall
        record.random_precision = float(np.mean([r.precision for r in rnd]))
        record.random_recall = float(np.mean([r.recall for r in rnd]))
        inside = [noise_fraction_inside(g, s) for g, s in zip(graphs, selections)]
        inside = [v for v in inside if v is not None]
        record.noise_inside = float(np.mean(inside)) if inside else None
        record.noise_graph = float(np.mean([graph_noise_fraction(g) for g in graphs]))
    return record


def metrics_table(record: MetricsRecord, title: str = "Metrics") -> Table:
    table = Table(title=title)
    table.add_column("Metric", style="cyan")
    table.add_column("Value", style="white")
    for key, value in record.to_dict().items():
        if isinstance(value, dict):
            shown = ", ".join(f"{k}={v:.4f}" if isinstance(v, float) else f"{k}={v}" for k, v in value.items())
        elif isinstance(value, float):
            shown = f"{value:.4f}"
        else:
            shown = str(value)
        table.add_row(key, shown)
    return table


def write_report(record: MetricsRecord, path: Union[str, Path], title: str = "Metrics") -> Dict[str, Path]:
    """Write a text table (``path``) and a JSON summary next to it."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        Console(file=f, width=100, color_system=None).print(metrics_table(record, title))
    summary_path = path.with_suffix(".json")
    with open(summary_path, "w", encoding="utf-8") as f:
        json.dump(record.to_dict(), f, indent=2, sort_keys=True)
    logger.info(f"Metrics report written to {path} and {summary_path}")
    return {"report": path, "summary": summary_path}
