"""Model checkpoints: one .npz archive of named parameters plus a JSON ``__meta__`` entry."""

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Optional, Union

import numpy as np

from .config import TrainConfig, build_config
from .errors import DatasetFormatError, ShapeError
from .graph_data import DatasetMeta
from .trainer import ModelState

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
META_KEY = "__meta__"


@dataclass
class Checkpoint:
    """A loaded checkpoint."""
    state: ModelState
    config: TrainConfig
    dataset: DatasetMeta
    info: Dict[str, Any]

    def check_compatible(self, meta: DatasetMeta) -> None:
        """Raise ShapeError when ``meta`` does not fit the stored model."""
        if meta.feature_dim != self.dataset.feature_dim:
            raise ShapeError(
                f"checkpoint expects feature width {self.dataset.feature_dim}, dataset has {meta.feature_dim}"
            )
        if meta.task != self.dataset.task:
            raise ShapeError(f"checkpoint was trained for {self.dataset.task}, dataset is {meta.task}")
        if meta.task == "classification" and meta.num_classes > self.dataset.num_classes:
            raise ShapeError(
                f"checkpoint predicts {self.dataset.num_classes} classes, dataset has {meta.num_classes}"
            )


def save_checkpoint(
    path: Union[str, Path],
    state: ModelState,
    cfg: TrainConfig,
    dataset: DatasetMeta,
    extra: Optional[Dict[str, Any]] = None,
) -> Path:
    """Write parameters and metadata to ``path`` (suffix forced to .npz)."""
    path = Path(path).with_suffix(".npz")
    path.parent.mkdir(parents=True, exist_ok=True)
    meta = {
        "format_version": FORMAT_VERSION,
        "mode": state.mode,
        "task": state.task,
        "architecture": {
            "feature_dim": state.encoder.in_dim,
            "hidden": cfg.hidden,
            "num_layers": cfg.num_layers,
            "num_outputs": state.classifier.out_dim,
        },
        "config": cfg.model_dump(mode="json"),
        "dataset": dataset.to_dict(),
        "shapes": {name: list(array.shape) for name, array in state.named_arrays().items()},
        "extra": extra or {},
    }
    arrays = state.named_arrays()
    arrays[META_KEY] = np.array(json.dumps(meta, sort_keys=True))
    with open(path, "wb") as f:
        np.savez(f, **arrays)
    logger.info(f"Saved checkpoint with {len(arrays) - 1} parameters to {path}")
    return path


def load_checkpoint(path: Union[str, Path]) -> Checkpoint:
    """Rebuild the ModelState stored at ``path``."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Checkpoint not found: {path}")
    with np.load(path, allow_pickle=False) as archive:
        if META_KEY not in archive.files:
            raise DatasetFormatError("checkpoint has no __meta__ entry", path.name)
        meta = json.loads(str(archive[META_KEY]))
        arrays = {name: np.array(archive[name]) for name in archive.files if name != META_KEY}

    if meta.get("format_version") != FORMAT_VERSION:
        raise DatasetFormatError(f"unsupported checkpoint version {meta.get('format_version')}", path.name)
    cfg = build_config(meta["config"])
    arch = meta["architecture"]
    state = ModelState.build(arch["feature_dim"], arch["num_outputs"], cfg, meta["task"])
    expected = state.named_arrays()
    for name, array in arrays.items():
        if name not in expected:
            raise DatasetFormatError(f"unexpected parameter {name}", path.name)
        if expected[name].shape != array.shape:
            raise ShapeError(f"parameter {name} has shape {array.shape}, expected {expected[name].shape}")
    missing = sorted(set(expected) - set(arrays))
    if missing:
        raise DatasetFormatError(f"missing parameters {missing}", path.name)
    state.load_arrays(arrays)
    logger.info(f"Loaded checkpoint {path} (mode={state.mode}, task={state.task})")
    return Checkpoint(state, cfg, DatasetMeta.from_dict(meta["dataset"]), meta)
