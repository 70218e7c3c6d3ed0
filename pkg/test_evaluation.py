"""Tests for accuracy, planted-structure recovery metrics and reports."""

import json

import networkx as nx
import numpy as np
import pytest

from conftest import random_graph
from src.errors import DomainError
from src.evaluation import (
    MeanStd,
    Prediction,
    accuracy,
    component_stats,
    evaluate_predictions,
    graph_noise_fraction,
    node_pr,
    noise_fraction_inside,
    property_bias,
    random_baseline_pr,
    selection_iou,
    size_stats,
    subgraph_iou,
    write_report,
)
from src.graph_data import Graph, TruthMask, generate_planted_motif, graph_from_edges
from src.sib import select_nodes


def two_triangles() -> Graph:
    return graph_from_edges(6, [(0, 1), (1, 2), (0, 2), (3, 4), (4, 5), (3, 5)], label=1)


def test_accuracy_examples():
    assert accuracy([0, 1, 1], [0, 1, 1]) == 1.0
    assert accuracy([0, 1, 0, 1], [0, 0, 0, 0]) == 0.5
    with pytest.raises(DomainError):
        accuracy([], [])
    with pytest.raises(DomainError):
        accuracy([0, 1], [0])


def test_mean_std_is_population():
    stats = MeanStd.of([1.0, 3.0])
    assert (stats.mean, stats.std) == (2.0, 1.0)
    assert str(stats) == "2.000 ± 1.000"


def test_node_pr_examples():
    truth = [True, True, False, False]
    assert node_pr([0, 1], truth) == node_pr([1, 0], truth)
    exact = node_pr([0, 1], truth)
    assert (exact.precision, exact.recall) == (1.0, 1.0)
    disjoint = node_pr([2, 3], truth)
    assert (disjoint.precision, disjoint.recall) == (0.0, 0.0)
    empty = node_pr([], truth)
    assert empty.precision == 0.0
    assert empty.empty_selection


def test_node_pr_matches_counting_oracle():
    rng = np.random.default_rng(0)
    for _ in range(100):
        n = int(rng.integers(1, 20))
        truth = rng.random(n) < 0.4
        chosen = np.nonzero(rng.random(n) < 0.5)[0].tolist()
        tp = sum(1 for v in chosen if truth[v])
        result = node_pr(chosen, TruthMask("node", truth))
        assert result.precision == (tp / len(chosen) if chosen else 0.0)
        assert result.recall == (tp / truth.sum() if truth.any() else 0.0)
        assert 0.0 <= result.precision <= 1.0 and 0.0 <= result.recall <= 1.0


def test_node_pr_requires_node_truth():
    with pytest.raises(DomainError):
        node_pr([0], None)
    with pytest.raises(DomainError):
        node_pr([0], TruthMask("edge", [True]))
    with pytest.raises(DomainError):
        node_pr([0], graph_from_edges(2, [(0, 1)]))


def test_random_baseline():
    truth = TruthMask("node", [True, False, False, False])
    rnd = random_baseline_pr(truth, 2)
    assert (rnd.precision, rnd.recall) == (0.25, 0.5)
    with pytest.raises(DomainError):
        random_baseline_pr(truth, 5)


def test_component_stats_examples():
    g = two_triangles()
    assert component_stats(g, range(3)) == component_stats(g, [2, 1, 0])
    connected = component_stats(g, [0, 1, 2])
    assert (connected.count, connected.largest_fraction) == (1, 0.5)
    both = component_stats(g, range(6))
    assert (both.count, both.largest_fraction) == (2, 0.5)
    empty = component_stats(g, [])
    assert (empty.count, empty.largest_fraction) == (0, 0.0)


def test_component_stats_matches_networkx():
    rng = np.random.default_rng(1)
    for _ in range(100):
        g = random_graph(rng, int(rng.integers(1, 15)), 0.2)
        chosen = np.nonzero(rng.random(g.n) < 0.6)[0].tolist()
        stats = component_stats(g, chosen)
        if not chosen:
            assert stats.count == 0
            continue
        parts = list(nx.connected_components(nx.Graph(g.adjacency).subgraph(chosen)))
        assert stats.count == len(parts)
        assert stats.largest_fraction == pytest.approx(max(len(p) for p in parts) / g.n)


def test_size_stats():
    g = graph_from_edges(4, [(0, 1), (2, 3)])
    full = size_stats([g, g], [select_nodes(g, range(4))] * 2)
    assert (full.size_pct.mean, full.size_pct.std) == (100.0, 0.0)
    half = size_stats([g, g], [select_nodes(g, [0, 1])] * 2)
    assert (half.size_pct.mean, half.size_pct.std) == (50.0, 0.0)
    assert half.largest_component_pct.mean == 50.0


def test_property_bias_examples():
    g = graph_from_edges(4, [(0, 1), (1, 2), (2, 3)], label=4.0)
    assert property_bias([g], [select_nodes(g, range(4))]).mean == 0.0
    partial = property_bias([g], [select_nodes(g, [0, 1])])
    assert partial.mean == 2.0
    empty = property_bias([g], [select_nodes(g, [])])
    assert (empty.mean, empty.flagged) == (4.0, 1)


def test_property_bias_is_zero_for_perfect_extraction():
    ds = generate_planted_motif(count=8, motif_size=6, noise_size=3, edge_prob=0.3, seed=2, task="regression")
    selections = [select_nodes(g, np.nonzero(g.truth_mask.values)[0]) for g in ds.graphs]
    bias = property_bias(ds.graphs, selections)
    assert (bias.mean, bias.std, bias.flagged) == (0.0, 0.0, 0)


def test_size_stats_and_property_bias_reject_unpaired_inputs():
    g = graph_from_edges(3, [(0, 1)], label=2.0)
    with pytest.raises(DomainError):
        size_stats([g, g], [select_nodes(g, [0])])
    with pytest.raises(DomainError):
        property_bias([g], [select_nodes(g, [0]), select_nodes(g, [1])])


def test_noise_fractions_with_partial_overlap():
    g = graph_from_edges(5, [(0, 1), (1, 2), (2, 3), (3, 4)],
                         truth_mask=TruthMask("node", [True, True, False, False, False]))
    assert noise_fraction_inside(g, select_nodes(g, [1, 2, 3])) == pytest.approx(2.0 / 3.0)
    assert noise_fraction_inside(g, select_nodes(g, [0, 1])) == 0.0
    assert noise_fraction_inside(g, select_nodes(g, [4])) == 1.0
    assert noise_fraction_inside(g, select_nodes(g, [])) is None
    assert graph_noise_fraction(g) == pytest.approx(0.6)


def test_noise_fractions_without_noise_nodes():
    g = graph_from_edges(3, [(0, 1), (1, 2)], truth_mask=TruthMask("node", [True, True, True]))
    assert graph_noise_fraction(g) == 0.0
    assert noise_fraction_inside(g, select_nodes(g, [0, 2])) == 0.0


def test_noise_fractions_need_node_truth():
    g = graph_from_edges(3, [(0, 1), (1, 2)])
    with pytest.raises(DomainError):
        graph_noise_fraction(g)
    edge_truth = graph_from_edges(3, [(0, 1), (1, 2)], truth_mask=TruthMask("edge", [True, False]))
    with pytest.raises(DomainError):
        noise_fraction_inside(edge_truth, select_nodes(edge_truth, [0]))


def test_iou():
    assert subgraph_iou([0, 1, 2], [1, 2, 3]) == 0.5
    assert subgraph_iou([], []) == 1.0
    g = two_triangles()
    first = [select_nodes(g, [0, 1, 2, 3]), select_nodes(g, [])]
    second = [select_nodes(g, [0, 1, 2]), select_nodes(g, [])]
    assert selection_iou(first, second) == pytest.approx((0.75 + 1.0) / 2)
    assert selection_iou(first, second, largest_only=True) == 1.0
    with pytest.raises(DomainError):
        selection_iou(first, second[:1])


def test_evaluate_predictions_with_truth():
    ds = generate_planted_motif(count=4, motif_size=4, noise_size=4, edge_prob=0.3, seed=0)
    preds = [Prediction(g.label, select_nodes(g, np.nonzero(g.truth_mask.values)[0])) for g in ds.graphs]
    record = evaluate_predictions(ds.graphs, preds)
    assert record.accuracy == 1.0
    assert (record.node_precision, record.node_recall) == (1.0, 1.0)
    assert record.random_precision == pytest.approx(0.5)
    assert record.noise_inside == 0.0
    assert record.noise_graph == pytest.approx(0.5)
    assert record.disconnected_parts == 1.0
    assert record.edge_precision is None


def test_evaluate_predictions_without_truth_omits_recovery_metrics():
    g = graph_from_edges(3, [(0, 1)], label=0)
    record = evaluate_predictions([g], [Prediction(1, select_nodes(g, [0]))])
    data = record.to_dict()
    assert data["accuracy"] == 0.0
    assert "node_precision" not in data
    assert "random_precision" not in data
    assert data["subgraph_size_pct"]["mean"] == pytest.approx(100.0 / 3)


def test_evaluate_predictions_line_graph_reports_edge_metrics():
    g = graph_from_edges(3, [(0, 1), (1, 2)], label=0, truth_mask=TruthMask("node", [True, False, False]))
    record = evaluate_predictions([g], [Prediction(0, select_nodes(g, [0]))], line_graph=True)
    assert (record.edge_precision, record.edge_recall) == (1.0, 1.0)
    assert record.node_precision is None


def test_evaluate_predictions_regression():
    g = graph_from_edges(3, [(0, 1), (1, 2)], label=3.0)
    record = evaluate_predictions([g], [Prediction(2.0, select_nodes(g, [0, 1]))], regression=True)
    assert record.mse == 1.0
    assert record.accuracy is None
    assert record.property_bias.mean == 1.0


def test_write_report(tmp_path):
    g = graph_from_edges(2, [(0, 1)], label=0)
    record = evaluate_predictions([g], [Prediction(0, select_nodes(g, [0, 1]))])
    paths = write_report(record, tmp_path / "metrics.txt", title="Test split")
    assert "Test split" in paths["report"].read_text()
    summary = json.loads(paths["summary"].read_text())
    assert summary["accuracy"] == 1.0
    assert summary["count"] == 1
