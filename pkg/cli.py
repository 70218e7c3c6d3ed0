#!/usr/bin/env python3
"""CLI for subgraph information bottleneck training and evaluation."""

import json
import logging
import shutil
import sys
from pathlib import Path
from typing import Any, Dict, Optional

import click
from rich.console import Console
from rich.logging import RichHandler
from rich.panel import Panel
from rich.table import Table

from src.checkpoint import load_checkpoint, save_checkpoint
from src.config import TrainConfig, build_config, resolve_config, settings
from src.errors import (
    ConfigError,
    DatasetFormatError,
    DivergenceError,
    DomainError,
    NonFiniteError,
    ShapeError,
    SibError,
)
from src.evaluation import evaluate_predictions, metrics_table, selection_iou, write_report
from src.exporter import export_gml, write_memberships
from src.graph_data import (
    Dataset,
    add_redundant_edges_dataset,
    generate_planted_motif,
    parse_tu_dataset,
    prepare_dataset,
    split_dataset,
    write_tu_dataset,
)
from src.telemetry import RunManifest, TraceWriter
from src.trainer import cross_validate, predict, train

# Setup rich console
console = Console()

# Setup logging
logging.basicConfig(
    level=getattr(logging, settings.log_level.upper(), logging.INFO),
    format="%(message)s",
    handlers=[RichHandler(console=console, rich_tracebacks=True)]
)
logger = logging.getLogger(__name__)

EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_DIVERGENCE = 3


def exit_code_for(error: BaseException) -> int:
    """Map an exception to the process exit code."""
    if isinstance(error, (DivergenceError, NonFiniteError)):
        return EXIT_DIVERGENCE
    if isinstance(error, (DatasetFormatError, FileNotFoundError, ShapeError, DomainError)):
        return EXIT_DATA
    return EXIT_USAGE


class SibGroup(click.Group):
    """Click group that maps toolkit errors onto exit codes 1/2/3."""

    def main(self, args=None, prog_name=None, complete_var=None, standalone_mode=True, **extra):
        try:
            result = super().main(args=args, prog_name=prog_name, complete_var=complete_var,
                                  standalone_mode=False, **extra)
        except click.exceptions.Exit as e:
            sys.exit(e.exit_code)
        except click.Abort:
            console.print("[red]✗ Aborted[/red]")
            sys.exit(EXIT_USAGE)
        except click.ClickException as e:
            e.show()
            sys.exit(EXIT_USAGE)
        except (SibError, FileNotFoundError) as e:
            console.print(f"[red]✗ Error: {e}[/red]")
            sys.exit(exit_code_for(e))
        sys.exit(result if isinstance(result, int) else 0)


def _prepare_output(output: Path, force: bool) -> None:
    if output.exists() and any(output.iterdir()):
        if not force:
            raise click.UsageError(f"Output directory {output} is not empty (use --force to overwrite)")
        shutil.rmtree(output)
    output.mkdir(parents=True, exist_ok=True)


def _write_generation_manifest(output: Path, kind: str, args: Dict[str, Any], ds: Dataset) -> Path:
    path = output / "generation.json"
    manifest = {
        "kind": kind,
        "args": args,
        "dataset": ds.meta.to_dict(),
        "graphs": len(ds),
        "fingerprint": ds.fingerprint(),
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")
    return path


def _show_dataset(ds: Dataset, title: str) -> None:
    table = Table(title=title, show_header=False)
    table.add_column("Property", style="cyan")
    table.add_column("Value", style="white")
    table.add_row("Name", ds.meta.name)
    table.add_row("Graphs", str(len(ds)))
    table.add_row("Task", ds.meta.task)
    table.add_row("Classes", str(ds.meta.num_classes))
    if not ds.is_regression:
        counts = ds.label_counts()
        table.add_row("Per class", ", ".join(f"{label}: {n}" for label, n in counts.items()))
    table.add_row("Feature width", str(ds.meta.feature_dim))
    table.add_row("Avg. nodes", f"{sum(g.n for g in ds.graphs) / max(len(ds), 1):.1f}")
    console.print(table)


@click.group(cls=SibGroup)
@click.option('--debug', is_flag=True, help='Enable debug logging')
def cli(debug):
    """Subgraph Information Bottleneck: train GNNs that explain predictions with subgraphs."""
    if debug:
        logging.getLogger().setLevel(logging.DEBUG)


@cli.group()
def generate():
    """Generate synthetic datasets in TU format."""


@generate.command('planted')
@click.option('--count', default=200, show_default=True, help='Number of graphs')
@click.option('--motif', 'motif_size', default=5, show_default=True, help='Motif size (nodes)')
@click.option('--noise', 'noise_size', default=10, show_default=True, help='Noise nodes per graph')
@click.option('--edge-prob', default=0.2, show_default=True, help='Edge probability among noise nodes')
@click.option('--task', type=click.Choice(['classification', 'regression']), default='classification')
@click.option('--name', default='PLANTED', show_default=True, help='Dataset name (file prefix)')
@click.option('--seed', default=0, show_default=True, help='Random seed')
@click.option('--output', type=click.Path(path_type=Path), default=None,
              help='Output directory (default: SIB_DATA_ROOT/<name>)')
@click.option('--force', is_flag=True, help='Overwrite a non-empty output directory')
def generate_planted(count, motif_size, noise_size, edge_prob, task, name, seed, output, force):
    """Cycle-vs-clique graphs with a planted motif and node ground truth."""
    output = output or settings.data_root / name
    _prepare_output(output, force)
    ds = generate_planted_motif(count, motif_size, noise_size, edge_prob, seed, task=task, name=name)
    write_tu_dataset(ds, output, name)
    args = {"count": count, "motif": motif_size, "noise": noise_size, "edge_prob": edge_prob,
            "task": task, "seed": seed}
    _write_generation_manifest(output, "planted", args, ds)
    console.print(f"[green]✓[/green] Wrote {len(ds)} graphs to [bold]{output}[/bold]")
    _show_dataset(ds, "Generated Dataset")


@generate.command('noisy-edges')
@click.option('--input', 'input_dir', type=click.Path(exists=True, file_okay=False, path_type=Path),
              required=True, help='Source TU dataset directory')
@click.option('--fraction', default=0.3, show_default=True, help='Redundant edges as a fraction of |E|')
@click.option('--seed', default=0, show_default=True, help='Random seed')
@click.option('--output', type=click.Path(path_type=Path), default=None,
              help='Output directory (default: INPUT_noisy)')
@click.option('--force', is_flag=True, help='Overwrite a non-empty output directory')
def generate_noisy_edges(input_dir, fraction, seed, output, force):
    """Copy of a dataset with redundant edges and an original-edge truth mask."""
    output = output or input_dir.with_name(f"{input_dir.name}_noisy")
    source = parse_tu_dataset(input_dir)
    _prepare_output(output, force)
    ds = add_redundant_edges_dataset(source, fraction, seed)
    write_tu_dataset(ds, output, source.meta.name)
    args = {"input": input_dir.name, "fraction": fraction, "seed": seed}
    _write_generation_manifest(output, "noisy-edges", args, ds)
    console.print(f"[green]✓[/green] Wrote corrupted copy of {source.meta.name} to [bold]{output}[/bold]")
    _show_dataset(ds, "Generated Dataset")


def _config_options(func):
    """Training flags shared by ``train`` and ``crossval``; unset flags stay None."""
    options = [
        click.option('--config', 'config_file', type=click.Path(exists=True, dir_okay=False, path_type=Path),
                     default=None,
                     help='key=value config file'),
        click.option('--alpha', type=float, default=None, help='Weight of the connectivity loss'),
        click.option('--beta', type=float, default=None, help='Weight of the MI term'),
        click.option('--inner-steps', type=int, default=None, help='Inner (statistics network) steps T'),
        click.option('--outer-steps', type=int, default=None, help='Outer steps N'),
        click.option('--eta1', type=float, default=None, help='Inner learning rate'),
        click.option('--eta2', type=float, default=None, help='Outer learning rate'),
        click.option('--seed', type=int, default=None, help='Random seed'),
        click.option('--relaxation', type=click.Choice(['softmax', 'gumbel']), default=None),
        click.option('--tau', type=float, default=None, help='Gumbel-softmax temperature'),
        click.option('--threshold', 'inference_threshold', type=float, default=None,
                     help='Membership threshold at inference (default: argmax)'),
        click.option('--hidden', type=int, default=None, help='Hidden width'),
        click.option('--layers', 'num_layers', type=int, default=None, help='GCN layers'),
        click.option('--optimizer', type=click.Choice(['adam', 'sgd']), default=None),
        click.option('--batch-size', type=int, default=None, help='Mini-batch size (default: full batch)'),
        click.option('--drop-edge', type=float, default=None, help='DropEdge fraction per step'),
        click.option('--reinit/--no-reinit', 'reinit_statistics', default=None,
                     help='Re-initialize the statistics network every outer step'),
        click.option('--mode', type=click.Choice(['sib', 'gcn', 'att']), default=None),
        click.option('--ratio', 'att_ratio', type=float, default=None, help='Top-k ratio for --mode att'),
        click.option('--split', type=str, default=None, help='train,val,test fractions'),
        click.option('--progress/--no-progress', default=None, help='Show a progress bar'),
    ]
    for option in reversed(options):
        func = option(func)
    return func


def _dataset_options(func):
    func = click.option('--line-graph', is_flag=True, help='Train on line graphs (edge selection)')(func)
    func = click.option('--redundant', type=float, default=None,
                        help='Insert this fraction of redundant edges before training')(func)
    return func


def _build_config(config_file: Optional[Path], flags: Dict[str, Any]) -> TrainConfig:
    return resolve_config(config_file, flags)


def _resolve_dataset(dataset: Path, param_hint: str = "DATASET") -> Path:
    """A path as given, or a name looked up under SIB_DATA_ROOT."""
    path = settings.resolve_dataset(dataset)
    if not path.is_dir():
        raise click.BadParameter(f"dataset {dataset} not found (also looked in {settings.data_root})",
                                 param_hint=param_hint)
    return path


def _run_training(dataset: Path, output: Optional[Path], cfg: TrainConfig, redundant: Optional[float],
                  line_graph: bool, expected_fingerprint: Optional[str] = None) -> Path:
    """Train and write checkpoint, trace, subgraphs, report and manifest into the run directory."""
    ds = prepare_dataset(dataset, redundant, line_graph, cfg.seed)
    if expected_fingerprint is not None and ds.fingerprint() != expected_fingerprint:
        raise DatasetFormatError("dataset differs from the recorded run (fingerprint mismatch)", file=str(dataset))
    ds = split_dataset(ds, cfg.split, cfg.seed)
    _show_dataset(ds, "Dataset")

    output = output or settings.output_dir / dataset.name
    output.mkdir(parents=True, exist_ok=True)
    artifacts = {
        "checkpoint": str(output / "model.npz"),
        "trace": str(output / "trace.jsonl"),
        "subgraphs": str(output / "subgraphs.jsonl"),
        "report": str(output / "metrics.txt"),
    }
    transforms = {"dataset": str(dataset), "redundant": redundant, "line_graph": line_graph}
    manifest = RunManifest(
        command="train",
        config=cfg.model_dump(mode="json"),
        dataset={**ds.meta.to_dict(), "fingerprint": ds.fingerprint(), "transforms": transforms},
        seed=cfg.seed,
        artifacts=artifacts,
    )
    manifest_path = manifest.save(output / "manifest.json")

    writer = TraceWriter(artifacts["trace"])
    try:
        result = train(ds, cfg, writer)
    except DivergenceError as e:
        manifest.finalize(manifest_path, status="diverged", summary={"error": str(e)})
        raise

    save_checkpoint(artifacts["checkpoint"], result.state, cfg, ds.meta, extra={"transforms": transforms})
    predictions = predict(result.state, ds.graphs, cfg)
    write_memberships(artifacts["subgraphs"], predictions)

    test_idx = ds.splits.get("test") or ds.splits["train"]
    record = evaluate_predictions(
        [ds.graphs[i] for i in test_idx], [predictions[i] for i in test_idx],
        regression=ds.is_regression, line_graph=ds.meta.line_graph,
    )
    write_report(record, artifacts["report"], title="Test Metrics")
    manifest.finalize(manifest_path, summary={"test": record.to_dict(), "steps": len(result.trace)})

    console.print(f"\n[green]✓[/green] Trained {cfg.mode} for {cfg.outer_steps} steps")
    console.print(metrics_table(record, title="Test Metrics"))
    console.print(f"  • Checkpoint: {artifacts['checkpoint']}")
    console.print(f"  • Trace: {artifacts['trace']}")
    console.print(f"  • Manifest: {manifest_path}")
    return manifest_path


@cli.command('train')
@click.argument('dataset', type=click.Path(path_type=Path))
@click.option('--output', type=click.Path(path_type=Path), default=None,
              help='Run directory (default: SIB_OUTPUT_DIR/<dataset>)')
@_dataset_options
@_config_options
def train_cmd(dataset, output, line_graph, redundant, config_file, **flags):
    """Train on DATASET (a directory, or a name under SIB_DATA_ROOT)."""
    cfg = _build_config(config_file, flags)
    _run_training(_resolve_dataset(dataset), output, cfg, redundant, line_graph)


@cli.command('replay')
@click.argument('manifest', type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option('--output', type=click.Path(path_type=Path), required=True, help='New run directory')
def replay_cmd(manifest, output):
    """Re-run the training recorded in MANIFEST with the same config, data and seed."""
    recorded = RunManifest.load(manifest)
    if recorded.command != "train":
        raise click.UsageError(f"{manifest} records a '{recorded.command}' run, not 'train'")
    transforms = recorded.dataset.get("transforms") or {}
    if "dataset" not in transforms:
        raise DatasetFormatError("manifest has no dataset path", file=str(manifest))
    cfg = build_config(recorded.config)
    logger.info(f"Replaying run {recorded.run_id} into {output}")
    _run_training(
        _resolve_dataset(Path(transforms["dataset"])), output, cfg,
        transforms.get("redundant"), bool(transforms.get("line_graph")),
        expected_fingerprint=recorded.dataset.get("fingerprint"),
    )


def _checkpoint_transforms(ckpt) -> Dict[str, Any]:
    return ckpt.info.get("extra", {}).get("transforms", {})


def _load_for_checkpoint(checkpoint_path: Path, dataset: Path):
    ckpt = load_checkpoint(checkpoint_path)
    transforms = _checkpoint_transforms(ckpt)
    ds = prepare_dataset(_resolve_dataset(dataset), transforms.get("redundant"),
                         bool(transforms.get("line_graph")), ckpt.config.seed)
    ckpt.check_compatible(ds.meta)
    return ckpt, ds


def _compare_selections(ckpt, compare_path: Path, ds: Dataset, graphs, predictions) -> Dict[str, float]:
    """Mean IoU between this checkpoint's selections and another run's on the same graphs."""
    other = load_checkpoint(compare_path)
    mine, theirs = _checkpoint_transforms(ckpt), _checkpoint_transforms(other)
    if any(mine.get(key) != theirs.get(key) for key in ("redundant", "line_graph")):
        raise click.UsageError(f"{compare_path} was trained with different dataset transforms")
    other.check_compatible(ds.meta)
    first = [p.selection for p in predictions]
    second = [p.selection for p in predict(other.state, graphs, other.config)]
    return {
        "selection_iou": selection_iou(first, second),
        "largest_component_iou": selection_iou(first, second, largest_only=True),
    }


@cli.command('eval')
@click.argument('checkpoint', type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.argument('dataset', type=click.Path(path_type=Path))
@click.option('--split', 'split_name', type=click.Choice(['train', 'val', 'test', 'all']), default='test',
              show_default=True, help='Split to evaluate')
@click.option('--output', type=click.Path(path_type=Path), default=None,
              help='Report path (JSON summary written next to it)')
@click.option('--compare', 'compare_path', type=click.Path(exists=True, dir_okay=False, path_type=Path),
              default=None, help='Second checkpoint; adds the IoU of the two runs\' selections')
def eval_cmd(checkpoint, dataset, split_name, output, compare_path):
    """Evaluate CHECKPOINT on DATASET; the split is recreated from the stored config."""
    ckpt, ds = _load_for_checkpoint(checkpoint, dataset)
    if split_name != "all":
        ds = split_dataset(ds, ckpt.config.split, ckpt.config.seed)
    graphs = ds.subset(split_name)
    if not graphs:
        raise ConfigError(f"split '{split_name}' is empty", key="split")
    predictions = predict(ckpt.state, graphs, ckpt.config)
    record = evaluate_predictions(graphs, predictions, regression=ds.is_regression,
                                  line_graph=ds.meta.line_graph)
    if compare_path is not None:
        record.extra.update(_compare_selections(ckpt, compare_path, ds, graphs, predictions))
    output = output or checkpoint.with_name(f"eval_{split_name}.txt")
    paths = write_report(record, output, title=f"Metrics ({split_name})")

    console.print(metrics_table(record, title=f"Metrics ({split_name})"))
    console.print(f"[green]✓[/green] Report written to {paths['report']} and {paths['summary']}")


@cli.command('export')
@click.argument('checkpoint', type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.argument('dataset', type=click.Path(path_type=Path))
@click.option('--index', type=int, required=True, help='Graph index (0-based)')
@click.option('--output', type=click.Path(path_type=Path), default=None, help='GML output path')
def export_cmd(checkpoint, dataset, index, output):
    """Export graph INDEX of DATASET as GML with subgraph membership flags."""
    ckpt, ds = _load_for_checkpoint(checkpoint, dataset)
    if not 0 <= index < len(ds):
        raise click.BadParameter(f"index {index} outside 0..{len(ds) - 1}", param_hint="--index")
    g = ds.graphs[index]
    prediction = predict(ckpt.state, [g], ckpt.config)[0]
    output = output or checkpoint.with_name(f"graph_{index}.gml")
    export_gml(g, prediction.selection, output)
    console.print(f"[green]✓[/green] Exported graph {index} ({prediction.selection.size}/{g.n} nodes selected) "
                  f"to [bold]{output}[/bold]")


@cli.command('crossval')
@click.argument('dataset', type=click.Path(path_type=Path))
@click.option('--folds', default=10, show_default=True, help='Number of folds')
@click.option('--output', type=click.Path(path_type=Path), default=None, help='JSON summary path')
@_dataset_options
@_config_options
def crossval_cmd(dataset, folds, output, line_graph, redundant, config_file, **flags):
    """Stratified k-fold accuracy (mean ± population std) on DATASET."""
    cfg = _build_config(config_file, flags)
    ds = prepare_dataset(_resolve_dataset(dataset), redundant, line_graph, cfg.seed)
    result = cross_validate(ds, cfg, folds=folds, progress=cfg.progress)

    table = Table(title=f"{folds}-fold Cross-Validation ({cfg.mode})")
    table.add_column("Fold", style="cyan")
    table.add_column("Train", style="white")
    table.add_column("Test", style="white")
    table.add_column("Accuracy", style="green")
    for fold, row in result.frame.iterrows():
        table.add_row(str(fold + 1), str(row["train"]), str(row["test"]), f"{row['accuracy']:.3f}")
    console.print(table)
    console.print(Panel.fit(f"[bold]Accuracy: {result.mean:.3f} ± {result.std:.3f}[/bold]", border_style="green"))

    if output is not None:
        output.parent.mkdir(parents=True, exist_ok=True)
        with open(output, "w", encoding="utf-8") as f:
            json.dump({"mode": cfg.mode, "config": cfg.model_dump(mode="json"), **result.to_dict()},
                      f, indent=2, sort_keys=True)
        console.print(f"[green]✓[/green] Summary written to {output}")


if __name__ == '__main__':
    cli()
