"""Export extracted subgraphs as GML graph descriptions and JSON Lines membership files."""

import json
import logging
from pathlib import Path
from typing import Optional, Sequence, Union

import networkx as nx

from .evaluation import Prediction
from .graph_data import Graph
from .sib import SubgraphSelection

logger = logging.getLogger(__name__)


def to_networkx(g: Graph, selection: Optional[SubgraphSelection] = None) -> nx.Graph:
    """networkx view of ``g`` with integer ``member`` and ``truth`` node attributes."""
    graph = nx.Graph()
    members = set(selection.nodes) if selection is not None else set()
    truth = g.node_truth()
    for v in range(g.n):
        attrs = {"member": int(v in members)}
        if truth is not None:
            attrs["truth"] = int(truth[v])
        graph.add_node(v, **attrs)
    edge_truth = None
    if g.truth_mask is not None and g.truth_mask.kind == "edge":
        edge_truth = g.truth_mask.values
    for idx, (i, j) in enumerate(g.edges):
        if edge_truth is not None:
            graph.add_edge(i, j, truth=int(edge_truth[idx]))
        else:
            graph.add_edge(i, j)
    if g.label is not None:
        graph.graph["label"] = g.label
    return graph


def export_gml(g: Graph, selection: SubgraphSelection, path: Union[str, Path]) -> Path:
    """Write ``g`` as GML; selected nodes carry ``member 1``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if selection.empty:
        logger.warning(f"Exporting an empty selection to {path}: no node is marked")
    nx.write_gml(to_networkx(g, selection), str(path))
    logger.info(f"Exported {g.n}-node graph with {selection.size} member node(s) to {path}")
    return path


def write_memberships(path: Union[str, Path], predictions: Sequence[Prediction],
                      indices: Optional[Sequence[int]] = None) -> Path:
    """One ``{graph, members, largest_component, empty}`` record per line."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    indices = list(indices) if indices is not None else list(range(len(predictions)))
    with open(path, "w", encoding="utf-8") as f:
        for idx, pred in zip(indices, predictions):
            record = {
                "graph": idx,
                "members": list(pred.selection.nodes),
                "largest_component": list(pred.selection.largest_component),
                "empty": pred.selection.empty,
            }
            f.write(json.dumps(record, sort_keys=True) + "\n")
    return path
