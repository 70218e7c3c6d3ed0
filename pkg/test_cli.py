"""End-to-end tests of the command-line interface with click's CliRunner."""

import json
from dataclasses import replace
from pathlib import Path

import networkx as nx
import numpy as np
import pytest
from click.testing import CliRunner

from cli import cli
from src.checkpoint import load_checkpoint
from src.errors import DivergenceError
from src.graph_data import parse_tu_dataset, write_tu_dataset

FAST = ["--outer-steps", "2", "--inner-steps", "1", "--hidden", "4", "--split", "0.5,0.25,0.25"]


def run(*args):
    return CliRunner().invoke(cli, [str(a) for a in args])


def ok(result):
    assert result.exit_code == 0, result.output
    return result


@pytest.fixture
def planted_dir(tmp_path) -> Path:
    path = tmp_path / "data" / "PLANTED"
    ok(run("generate", "planted", "--count", 8, "--motif", 4, "--noise", 3, "--edge-prob", 0.3,
           "--seed", 5, "--output", path))
    return path


@pytest.fixture
def trained(tmp_path, planted_dir) -> Path:
    output = tmp_path / "run"
    ok(run("train", planted_dir, "--output", output, *FAST))
    return output


def read_lines(path: Path):
    return [json.loads(line) for line in path.read_text().splitlines() if line.strip()]


# ---------------------------------------------------------------------------
# generate
# ---------------------------------------------------------------------------

def test_generate_planted_is_byte_identical_on_rerun(tmp_path):
    args = ["generate", "planted", "--count", 20, "--motif", 5, "--noise", 6, "--seed", 1]
    ok(run(*args, "--output", tmp_path / "a"))
    ok(run(*args, "--output", tmp_path / "b"))
    first = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert first == sorted(p.name for p in (tmp_path / "b").iterdir())
    assert "PLANTED_truth_mask.txt" in first
    for name in first:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_generate_refuses_non_empty_output_without_force(planted_dir):
    result = run("generate", "planted", "--count", 4, "--output", planted_dir)
    assert result.exit_code == 1
    assert "--force" in result.output
    ok(run("generate", "planted", "--count", 4, "--output", planted_dir, "--force"))
    assert len(parse_tu_dataset(planted_dir)) == 4


def test_generate_noisy_edges(tmp_path, planted_dir):
    output = tmp_path / "noisy"
    ok(run("generate", "noisy-edges", "--input", planted_dir, "--fraction", 0.3, "--output", output))
    ds = parse_tu_dataset(output)
    assert all(g.truth_mask.kind == "edge" for g in ds.graphs)
    original = parse_tu_dataset(planted_dir)
    for before, after in zip(original.graphs, ds.graphs):
        assert after.truth_mask.count == before.num_edges
        assert after.num_edges > before.num_edges


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------

def test_train_writes_all_artifacts(trained):
    for name in ("model.npz", "trace.jsonl", "subgraphs.jsonl", "metrics.txt", "metrics.json", "manifest.json"):
        assert (trained / name).exists(), name
    trace = read_lines(trained / "trace.jsonl")
    assert [r["step"] for r in trace] == [1, 2]
    assert all(len(r["mi_trace"]) == 2 for r in trace)
    manifest = json.loads((trained / "manifest.json").read_text())
    assert manifest["status"] == "completed"
    assert manifest["seed"] == 0
    assert manifest["config"]["outer_steps"] == 2
    assert len(read_lines(trained / "subgraphs.jsonl")) == 8
    metrics = json.loads((trained / "metrics.json").read_text())
    assert 0.0 <= metrics["node_precision"] <= 1.0


def test_train_is_deterministic(tmp_path, planted_dir):
    for name in ("one", "two"):
        ok(run("train", planted_dir, "--output", tmp_path / name, "--relaxation", "gumbel", *FAST))
    for artifact in ("trace.jsonl", "subgraphs.jsonl", "metrics.json"):
        assert (tmp_path / "one" / artifact).read_bytes() == (tmp_path / "two" / artifact).read_bytes()
    first = np.load(tmp_path / "one" / "model.npz")
    second = np.load(tmp_path / "two" / "model.npz")
    assert sorted(first.files) == sorted(second.files)
    for key in first.files:
        assert np.array_equal(first[key], second[key])


def test_train_missing_dataset_is_a_usage_error(tmp_path):
    result = run("train", tmp_path / "nowhere", "--output", tmp_path / "run")
    assert result.exit_code == 1


def test_train_unknown_config_key_is_named(tmp_path, planted_dir):
    config = tmp_path / "run.cfg"
    config.write_text("alpha=1.0\nbogus_key=3\n")
    result = run("train", planted_dir, "--config", config, "--output", tmp_path / "run")
    assert result.exit_code == 1
    assert "bogus_key" in result.output


def test_train_invalid_value_is_named(tmp_path, planted_dir):
    result = run("train", planted_dir, "--alpha=-1", "--output", tmp_path / "run")
    assert result.exit_code == 1
    assert "alpha" in result.output


def test_train_divergence_exits_3_and_marks_manifest(tmp_path, planted_dir, monkeypatch):
    def diverging(*_args, **_kwargs):
        raise DivergenceError(2, "l_mi")

    monkeypatch.setattr("cli.train", diverging)
    output = tmp_path / "run"
    result = run("train", planted_dir, "--output", output, *FAST)
    assert result.exit_code == 3
    assert "outer step 2" in result.output
    assert json.loads((output / "manifest.json").read_text())["status"] == "diverged"


def test_train_baselines(tmp_path, planted_dir):
    ok(run("train", planted_dir, "--output", tmp_path / "att", "--mode", "att", "--ratio", 0.5, *FAST))
    ok(run("train", planted_dir, "--output", tmp_path / "gcn", "--mode", "gcn", *FAST))
    for record in read_lines(tmp_path / "gcn" / "trace.jsonl"):
        assert record["l_con"] == 0.0 and record["l_mi"] == 0.0


def test_train_on_noisy_line_graphs_reports_edge_metrics(tmp_path, planted_dir):
    noisy = tmp_path / "noisy"
    ok(run("generate", "noisy-edges", "--input", planted_dir, "--fraction", 0.5, "--output", noisy))
    ok(run("train", noisy, "--line-graph", "--output", tmp_path / "run", *FAST))
    metrics = json.loads((tmp_path / "run" / "metrics.json").read_text())
    assert "edge_precision" in metrics
    assert "node_precision" not in metrics


def test_train_with_redundant_edges_flag(tmp_path, planted_dir):
    ok(run("train", planted_dir, "--redundant", 0.3, "--line-graph", "--output", tmp_path / "run", *FAST))
    ok(run("eval", tmp_path / "run" / "model.npz", planted_dir, "--split", "all"))


# ---------------------------------------------------------------------------
# eval and export
# ---------------------------------------------------------------------------

def test_eval_writes_report(trained, planted_dir):
    ok(run("eval", trained / "model.npz", planted_dir, "--split", "train"))
    summary = json.loads((trained / "eval_train.json").read_text())
    assert summary["count"] == 4
    assert 0.0 <= summary["accuracy"] <= 1.0
    assert "node_precision" in summary


def test_eval_without_truth_omits_recovery_metrics(tmp_path, trained, planted_dir):
    ds = parse_tu_dataset(planted_dir)
    bare = ds.map_graphs(lambda g: replace(g, truth_mask=None))
    write_tu_dataset(bare, tmp_path / "bare")
    output = tmp_path / "bare_eval.txt"
    ok(run("eval", trained / "model.npz", tmp_path / "bare", "--split", "all", "--output", output))
    summary = json.loads(output.with_suffix(".json").read_text())
    assert "accuracy" in summary
    assert "node_precision" not in summary


def test_eval_rejects_feature_width_mismatch(tmp_path, trained):
    other = tmp_path / "WIDE"
    other.mkdir()
    (other / "WIDE_A.txt").write_text("1, 2\n2, 1\n")
    (other / "WIDE_graph_indicator.txt").write_text("1\n1\n")
    (other / "WIDE_graph_labels.txt").write_text("0\n")
    (other / "WIDE_node_attributes.txt").write_text(", ".join(["0.5"] * 17) + "\n" + ", ".join(["1.5"] * 17) + "\n")
    result = run("eval", trained / "model.npz", other, "--split", "all")
    assert result.exit_code == 2
    assert "feature width" in result.output


def test_eval_reports_malformed_dataset_as_data_error(tmp_path, trained, planted_dir):
    broken = tmp_path / "broken"
    broken.mkdir()
    for path in planted_dir.iterdir():
        (broken / path.name).write_bytes(path.read_bytes())
    with open(broken / "PLANTED_A.txt", "a") as f:
        f.write("1, 999\n")
    result = run("eval", trained / "model.npz", broken)
    assert result.exit_code == 2
    assert "PLANTED_A.txt" in result.output


def test_export_gml_round_trip(tmp_path, trained, planted_dir):
    output = tmp_path / "graph_0.gml"
    ok(run("export", trained / "model.npz", planted_dir, "--index", 0, "--output", output))
    exported = nx.read_gml(output, label="id")
    g = parse_tu_dataset(planted_dir)[0]
    assert sorted(exported.nodes) == list(range(g.n))
    assert sorted(tuple(sorted(e)) for e in exported.edges) == g.edges
    members = sorted(v for v, flag in exported.nodes(data="member") if flag == 1)
    assert members == read_lines(trained / "subgraphs.jsonl")[0]["members"]
    truth = [exported.nodes[v]["truth"] for v in range(g.n)]
    assert truth == g.truth_mask.values.astype(int).tolist()


def test_export_rejects_out_of_range_index(trained, planted_dir):
    result = run("export", trained / "model.npz", planted_dir, "--index", 99)
    assert result.exit_code == 1


def test_checkpoint_reloads_with_config(trained):
    ckpt = load_checkpoint(trained / "model.npz")
    assert ckpt.config.outer_steps == 2
    assert ckpt.config.hidden == 4
    assert ckpt.state.mode == "sib"
    assert ckpt.info["extra"]["transforms"]["line_graph"] is False


# ---------------------------------------------------------------------------
# crossval
# ---------------------------------------------------------------------------

def test_crossval_summary(tmp_path, planted_dir):
    output = tmp_path / "cv.json"
    ok(run("crossval", planted_dir, "--folds", 4, "--mode", "gcn", "--outer-steps", 2, "--hidden", 4,
           "--output", output))
    summary = json.loads(output.read_text())
    assert len(summary["folds"]) == 4
    assert summary["mean"] == pytest.approx(float(np.mean(summary["folds"])))
    assert summary["std"] == pytest.approx(float(np.std(summary["folds"])))


def test_crossval_rejects_regression(tmp_path):
    data = tmp_path / "reg"
    ok(run("generate", "planted", "--count", 6, "--task", "regression", "--output", data))
    result = run("crossval", data, "--folds", 3, "--outer-steps", 1)
    assert result.exit_code == 1


# ---------------------------------------------------------------------------
# data root, replay and run comparison
# ---------------------------------------------------------------------------

def test_train_finds_dataset_by_name_under_data_root(tmp_path, planted_dir, monkeypatch):
    from cli import settings

    monkeypatch.setattr(settings, "data_root", planted_dir.parent)
    monkeypatch.chdir(tmp_path)
    output = tmp_path / "by_name"
    ok(run("train", "PLANTED", "--output", output, *FAST))
    manifest = json.loads((output / "manifest.json").read_text())
    assert manifest["dataset"]["transforms"]["dataset"] == str(planted_dir)
    ok(run("eval", output / "model.npz", "PLANTED", "--split", "all"))


def test_unknown_dataset_name_mentions_data_root(tmp_path, monkeypatch):
    from cli import settings

    monkeypatch.setattr(settings, "data_root", tmp_path / "data")
    monkeypatch.chdir(tmp_path)
    result = run("train", "MISSING", "--output", tmp_path / "run")
    assert result.exit_code == 1
    assert "MISSING" in result.output


def test_replay_reproduces_a_run(tmp_path, planted_dir):
    original = tmp_path / "original"
    ok(run("train", planted_dir, "--output", original, "--relaxation", "gumbel", "--drop-edge", 0.2, *FAST))
    for name in ("first", "second"):
        ok(run("replay", original / "manifest.json", "--output", tmp_path / name))
    for artifact in ("trace.jsonl", "subgraphs.jsonl", "metrics.json"):
        expected = (original / artifact).read_bytes()
        assert (tmp_path / "first" / artifact).read_bytes() == expected
        assert (tmp_path / "second" / artifact).read_bytes() == expected
    with np.load(tmp_path / "first" / "model.npz") as first, np.load(tmp_path / "second" / "model.npz") as second:
        assert sorted(first.files) == sorted(second.files)
        for key in first.files:
            assert np.array_equal(first[key], second[key])
    replayed = json.loads((tmp_path / "first" / "manifest.json").read_text())
    recorded = json.loads((original / "manifest.json").read_text())
    assert replayed["config"] == recorded["config"]
    assert replayed["dataset"]["fingerprint"] == recorded["dataset"]["fingerprint"]
    assert replayed["run_id"] != recorded["run_id"]


def test_replay_rejects_changed_dataset(tmp_path, planted_dir, trained):
    with open(planted_dir / "PLANTED_graph_labels.txt") as f:
        labels = f.read().splitlines()
    labels[0] = "1" if labels[0].strip() == "0" else "0"
    (planted_dir / "PLANTED_graph_labels.txt").write_text("\n".join(labels) + "\n")
    result = run("replay", trained / "manifest.json", "--output", tmp_path / "again")
    assert result.exit_code == 2
    assert "fingerprint" in result.output


def test_eval_compare_reports_selection_overlap(tmp_path, trained, planted_dir):
    output = tmp_path / "self.txt"
    ok(run("eval", trained / "model.npz", planted_dir, "--split", "all",
           "--compare", trained / "model.npz", "--output", output))
    summary = json.loads(output.with_suffix(".json").read_text())
    assert summary["selection_iou"] == 1.0
    assert summary["largest_component_iou"] == 1.0

    other = tmp_path / "other"
    ok(run("train", planted_dir, "--output", other, *FAST, "--seed", 7))
    output = tmp_path / "cross.txt"
    ok(run("eval", trained / "model.npz", planted_dir, "--split", "all",
           "--compare", other / "model.npz", "--output", output))
    summary = json.loads(output.with_suffix(".json").read_text())
    assert 0.0 <= summary["selection_iou"] <= 1.0
