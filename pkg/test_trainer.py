"""Tests for the inner/outer optimization loop, baselines, prediction and cross-validation."""

import math

import numpy as np
import pytest

from conftest import random_dataset, small_config
from src.config import TrainConfig
from src.errors import ConfigError, DivergenceError, NonFiniteError
from src.evaluation import evaluate_predictions
from src.graph_data import generate_planted_motif, parse_tu_dataset, prepare_dataset, split_dataset
from src.numerics import Tape
from src.telemetry import TraceWriter, read_trace
from src.trainer import (
    ModelState,
    cross_validate,
    embed_batch,
    graph_rng,
    inner_loop,
    make_optimizer,
    outer_step,
    predict,
    sib_loss,
    train,
)


def built_state(seed: int = 0, **overrides):
    ds = random_dataset(seed, count=4)
    cfg = small_config(seed=seed, **overrides)
    return ds, cfg, ModelState.build(ds.meta.feature_dim, ds.meta.num_classes, cfg)


def snapshot(params):
    return [np.array(p.data) for p in params]


def same(first, second) -> bool:
    return all(np.array_equal(a, b) for a, b in zip(first, second))


# ---------------------------------------------------------------------------
# Inner loop
# ---------------------------------------------------------------------------

def test_inner_loop_with_zero_rate_keeps_reinitialized_statistics():
    ds, _, state = built_state()
    init = state.statistics_init
    state.statistics.load({name: value + 1.0 for name, value in init.items()})
    emb = embed_batch(ds.graphs, state)
    trace = inner_loop(emb.graph_embeddings, emb.sub_embeddings, state.statistics, 1, 0.0, init)
    assert len(trace) == 2
    assert all(math.isfinite(v) for v in trace)
    assert trace[0] == trace[1]
    for name, value in state.statistics.snapshot().items():
        assert np.array_equal(value, init[name])


def test_inner_loop_ascends_the_bound():
    ds, _, state = built_state(1)
    emb = embed_batch(ds.graphs, state)
    trace = inner_loop(emb.graph_embeddings, emb.sub_embeddings, state.statistics, 20, 0.01)
    assert len(trace) == 21
    assert trace[-1] >= trace[0]


def test_inner_loop_only_moves_the_statistics_network():
    ds, _, state = built_state(2)
    before = snapshot(state.theta + state.phi1)
    stats_before = snapshot(state.phi2)
    emb = embed_batch(ds.graphs, state)
    inner_loop(emb.graph_embeddings, emb.sub_embeddings, state.statistics, 5, 0.05)
    assert same(before, snapshot(state.theta + state.phi1))
    assert not same(stats_before, snapshot(state.phi2))


def test_phi1_adds_attention_parameters_only_in_att_mode():
    _, _, sib_state = built_state(0)
    _, _, att_state = built_state(0, mode="att")
    assert [p.name for p in sib_state.phi1] == [p.name for p in sib_state.classifier.parameters()]
    expected = att_state.classifier.parameters() + att_state.attention.parameters()
    assert [p.name for p in att_state.phi1] == [p.name for p in expected]


def test_inner_loop_rejects_zero_steps():
    ds, _, state = built_state()
    emb = embed_batch(ds.graphs, state)
    with pytest.raises(ConfigError):
        inner_loop(emb.graph_embeddings, emb.sub_embeddings, state.statistics, 0, 0.05)


# ---------------------------------------------------------------------------
# Outer step
# ---------------------------------------------------------------------------

def test_outer_step_with_zero_rate_changes_nothing():
    ds, _, state = built_state(3)
    before = snapshot(state.parameters())
    breakdown = outer_step(ds.graphs, state, 5.0, 0.1, eta2=0.0)
    assert same(before, snapshot(state.parameters()))
    assert breakdown.total == pytest.approx(breakdown.l_cls + 5.0 * breakdown.l_con + 0.1 * breakdown.l_mi)


def test_outer_step_never_touches_statistics_network():
    ds, cfg, state = built_state(4)
    stats_before = snapshot(state.phi2)
    theta_before = snapshot(state.theta)
    outer_step(ds.graphs, state, 5.0, 0.1, cfg.eta2, make_optimizer(state, cfg))
    assert same(stats_before, snapshot(state.phi2))
    assert not same(theta_before, snapshot(state.theta))


def test_zero_weights_reduce_gradient_to_classification_loss():
    ds, _, state = built_state(5)
    with Tape() as tape:
        total, parts = sib_loss(ds.graphs, state, 0.0, 0.0)
    full = tape.backward(total)
    cls_only = tape.backward(parts["l_cls"])
    for param in state.trainable():
        assert np.allclose(full[param], cls_only[param], atol=1e-12)


def test_single_graph_batch_has_no_mi_term():
    ds, _, state = built_state(6)
    _, parts = sib_loss(ds.graphs[:1], state, 5.0, 0.1)
    assert parts["l_mi"].item() == 0.0


# ---------------------------------------------------------------------------
# Training runs
# ---------------------------------------------------------------------------

def test_train_smoke(toy_dataset, tmp_path):
    ds = split_dataset(toy_dataset, (1.0, 0.0, 0.0), seed=0)
    writer = TraceWriter(tmp_path / "trace.jsonl")
    result = train(ds, small_config(outer_steps=1, inner_steps=1), writer)
    assert len(result.trace) == 1
    record = result.trace[0]
    assert record.step == 1
    assert len(record.mi_trace) == 2
    assert all(math.isfinite(v) for v in (record.l_cls, record.l_con, record.l_mi, record.total))
    assert [r.to_dict() for r in read_trace(tmp_path / "trace.jsonl")] == [record.to_dict()]


def test_train_is_deterministic(planted_small):
    ds = split_dataset(planted_small, (0.5, 0.25, 0.25), seed=0)
    cfg = small_config(outer_steps=3, relaxation="gumbel", tau=0.5, batch_size=4, drop_edge=0.2)
    first, second = train(ds, cfg), train(ds, cfg)
    assert [r.to_dict() for r in first.trace] == [r.to_dict() for r in second.trace]
    a, b = first.state.named_arrays(), second.state.named_arrays()
    assert a.keys() == b.keys()
    assert all(np.array_equal(a[k], b[k]) for k in a)
    preds_a = predict(first.state, ds.graphs, cfg)
    preds_b = predict(second.state, ds.graphs, cfg)
    assert [(p.label, p.selection.nodes) for p in preds_a] == [(p.label, p.selection.nodes) for p in preds_b]


def test_train_records_validation_accuracy(planted_small):
    ds = split_dataset(planted_small, (0.5, 0.25, 0.25), seed=0)
    result = train(ds, small_config(outer_steps=2))
    assert all(0.0 <= r.val_acc <= 1.0 for r in result.trace)


def test_train_requires_two_graphs_for_sib(toy_dataset):
    ds = toy_dataset.with_splits({"train": [0]})
    with pytest.raises(ConfigError):
        train(ds, small_config())
    with pytest.raises(ConfigError):
        train(toy_dataset.with_splits({}), small_config())


def test_train_reports_divergence_with_step_and_component(toy_dataset, monkeypatch):
    def exploding(*_args, **_kwargs):
        raise NonFiniteError("overflow in connectivity loss")

    monkeypatch.setattr("src.trainer.connectivity_loss", exploding)
    ds = split_dataset(toy_dataset, (1.0, 0.0, 0.0), seed=0)
    with pytest.raises(DivergenceError) as info:
        train(ds, small_config())
    assert info.value.step == 1
    assert info.value.component == "l_con"
    assert "outer step 1" in str(info.value)


def test_gcn_baseline_selects_every_node(toy_dataset):
    ds = split_dataset(toy_dataset, (1.0, 0.0, 0.0), seed=0)
    cfg = small_config(mode="gcn", outer_steps=2)
    result = train(ds, cfg)
    assert all(r.l_con == 0.0 and r.l_mi == 0.0 and r.mi_trace == [] for r in result.trace)
    for g, pred in zip(ds.graphs, predict(result.state, ds.graphs, cfg)):
        assert pred.selection.nodes == list(range(g.n))


def test_attention_baseline_selects_top_ratio(planted_small):
    ds = split_dataset(planted_small, (0.5, 0.25, 0.25), seed=0)
    cfg = small_config(mode="att", att_ratio=0.5, outer_steps=2)
    result = train(ds, cfg)
    assert result.state.attention is not None
    for g, pred in zip(ds.graphs, predict(result.state, ds.graphs, cfg)):
        assert pred.selection.size == math.ceil(0.5 * g.n)
        assert pred.scores.shape == (g.n,)


def test_gcn_baseline_memorizes_toy_set(toy_dataset):
    ds = split_dataset(toy_dataset, (1.0, 0.0, 0.0), seed=0)
    cfg = small_config(mode="gcn", hidden=16, outer_steps=200, eta2=0.05)
    result = train(ds, cfg)
    preds = predict(result.state, ds.graphs, cfg)
    assert [p.label for p in preds] == [g.label for g in ds.graphs]


def test_regression_training_runs():
    ds = generate_planted_motif(count=6, motif_size=5, noise_size=2, edge_prob=0.3, seed=0, task="regression")
    ds = split_dataset(ds, (0.5, 0.25, 0.25), seed=0)
    result = train(ds, small_config(outer_steps=2))
    assert all(r.val_acc is None for r in result.trace)
    preds = predict(result.state, ds.graphs)
    assert all(isinstance(p.label, float) for p in preds)


# ---------------------------------------------------------------------------
# Prediction
# ---------------------------------------------------------------------------

def test_predict_sib_returns_assignment_and_honors_threshold(toy_dataset):
    ds = split_dataset(toy_dataset, (1.0, 0.0, 0.0), seed=0)
    cfg = small_config(outer_steps=1, inner_steps=1)
    state = train(ds, cfg).state
    for g, pred in zip(ds.graphs, predict(state, ds.graphs, cfg)):
        assert pred.assignment.shape == (g.n, 2)
        assert np.allclose(pred.assignment.sum(axis=1), 1.0)
    everything = predict(state, ds.graphs, small_config(inference_threshold=0.0))
    assert all(p.selection.size == g.n for p, g in zip(everything, ds.graphs))


def test_graph_rng_streams_are_reproducible():
    assert graph_rng(0, 3, 1).random() == graph_rng(0, 3, 1).random()
    assert graph_rng(0, 3, 1).random() != graph_rng(0, 3, 2).random()


# ---------------------------------------------------------------------------
# Cross-validation
# ---------------------------------------------------------------------------

def test_cross_validate_reports_every_fold(planted_small):
    cv = cross_validate(planted_small, small_config(mode="gcn", outer_steps=2), folds=4)
    assert len(cv.fold_accuracies) == 4
    assert list(cv.frame.index) == [0, 1, 2, 3]
    assert 0.0 <= cv.mean <= 1.0
    assert cv.std >= 0.0
    assert cv.to_dict()["folds"] == cv.fold_accuracies


def test_cross_validate_rejects_regression():
    ds = generate_planted_motif(count=6, motif_size=4, noise_size=1, edge_prob=0.3, seed=0, task="regression")
    with pytest.raises(ConfigError):
        cross_validate(ds, small_config(), folds=3)


# ---------------------------------------------------------------------------
# Long training runs
# ---------------------------------------------------------------------------

@pytest.mark.slow
def test_planted_motif_recovery():
    ds = generate_planted_motif(count=200, motif_size=5, noise_size=10, edge_prob=0.2, seed=0)
    ds = split_dataset(ds, (0.7, 0.05, 0.25), seed=0)
    cfg = TrainConfig(outer_steps=200, inner_steps=5, hidden=16, batch_size=32)
    state = train(ds, cfg).state
    test_graphs = ds.subset("test")
    record = evaluate_predictions(test_graphs, predict(state, test_graphs, cfg))
    assert record.accuracy > 0.9
    assert record.node_recall > record.random_recall
    assert record.noise_inside < record.noise_graph


@pytest.mark.slow
def test_mutag_cross_validation(mutag_dir):
    ds = parse_tu_dataset(mutag_dir)
    sib = cross_validate(ds, small_config(hidden=16, outer_steps=50, inner_steps=5), folds=10)
    gcn = cross_validate(ds, small_config(mode="gcn", hidden=16, outer_steps=50), folds=10)
    assert len(sib.fold_accuracies) == 10
    assert sib.mean >= 0.70
    assert sib.mean >= gcn.mean - 0.02


@pytest.mark.slow
def test_mutag_denoising_on_line_graphs(mutag_dir):
    ds = prepare_dataset(mutag_dir, redundant=0.3, line_graph_view=True, seed=0)
    ds = split_dataset(ds, (0.7, 0.05, 0.25), seed=0)
    cfg = small_config(hidden=16, outer_steps=100, inner_steps=5, batch_size=32)
    state = train(ds, cfg).state
    test_graphs = ds.subset("test")
    record = evaluate_predictions(test_graphs, predict(state, test_graphs, cfg), line_graph=True)
    assert record.edge_precision >= 0.6 and record.edge_precision > record.random_precision
    assert record.edge_recall >= 0.35 and record.edge_recall > record.random_recall
