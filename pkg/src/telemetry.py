"""Training traces and run manifests."""

import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Union
from uuid import uuid4

import pandas as pd

logger = logging.getLogger(__name__)

MANIFEST_VERSION = 1


@dataclass
class TraceRecord:
    """One outer step of training."""
    step: int
    l_cls: float
    l_con: float
    l_mi: float
    total: float
    val_acc: Optional[float] = None
    mi_trace: List[float] = field(default_factory=list)

    def to_dict(self) -> Dict[str, Any]:
        """Convert to dictionary for serialization."""
        return {
            "step": self.step,
            "l_cls": self.l_cls,
            "l_con": self.l_con,
            "l_mi": self.l_mi,
            "total": self.total,
            "val_acc": self.val_acc,
            "mi_trace": list(self.mi_trace),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "TraceRecord":
        return cls(
            step=int(data["step"]),
            l_cls=float(data["l_cls"]),
            l_con=float(data["l_con"]),
            l_mi=float(data["l_mi"]),
            total=float(data["total"]),
            val_acc=data.get("val_acc"),
            mi_trace=[float(v) for v in data.get("mi_trace", [])],
        )


class TraceWriter:
    """Appends TraceRecords as JSON Lines; also keeps them in memory."""

    def __init__(self, path: Optional[Union[str, Path]] = None):
        self.path = Path(path) if path is not None else None
        self.records: List[TraceRecord] = []
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self.path.write_text("", encoding="utf-8")

    def write(self, record: TraceRecord) -> None:
        self.records.append(record)
        if self.path is None:
            return
        with open(self.path, "a", encoding="utf-8") as f:
            f.write(json.dumps(record.to_dict(), sort_keys=True) + "\n")

    def __len__(self) -> int:
        return len(self.records)


def read_trace(path: Union[str, Path]) -> List[TraceRecord]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Trace file not found: {path}")
    with open(path, "r", encoding="utf-8") as f:
        return [TraceRecord.from_dict(json.loads(line)) for line in f if line.strip()]


def load_trace(path: Union[str, Path]) -> pd.DataFrame:
    """Trace as a DataFrame indexed by step (``mi_trace`` kept as a list column)."""
    records = read_trace(path)
    frame = pd.DataFrame([r.to_dict() for r in records])
    if not frame.empty:
        frame = frame.set_index("step")
    return frame


@dataclass
class RunManifest:
    """Everything needed to replay a run: config, data fingerprint, seed and artifacts."""
    command: str
    config: Dict[str, Any]
    dataset: Dict[str, Any]
    seed: int
    artifacts: Dict[str, str] = field(default_factory=dict)
    run_id: str = field(default_factory=lambda: str(uuid4()))
    started_at: float = field(default_factory=time.time)
    status: str = "running"
    duration_seconds: Optional[float] = None
    summary: Dict[str, Any] = field(default_factory=dict)
    version: int = MANIFEST_VERSION

    def to_dict(self) -> Dict[str, Any]:
        return {
            "version": self.version,
            "run_id": self.run_id,
            "command": self.command,
            "status": self.status,
            "seed": self.seed,
            "config": self.config,
            "dataset": self.dataset,
            "artifacts": self.artifacts,
            "started_at": self.started_at,
            "duration_seconds": self.duration_seconds,
            "summary": self.summary,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "RunManifest":
        return cls(
            command=data["command"],
            config=data["config"],
            dataset=data["dataset"],
            seed=int(data["seed"]),
            artifacts=data.get("artifacts", {}),
            run_id=data.get("run_id", str(uuid4())),
            started_at=data.get("started_at", 0.0),
            status=data.get("status", "running"),
            duration_seconds=data.get("duration_seconds"),
            summary=data.get("summary", {}),
            version=data.get("version", MANIFEST_VERSION),
        )

    def save(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_dict(), f, indent=2, sort_keys=True)
        return path

    def finalize(self, path: Union[str, Path], status: str = "completed",
                 summary: Optional[Dict[str, Any]] = None) -> Path:
        """Record the outcome and wall-clock duration, then rewrite the manifest."""
        self.status = status
        self.duration_seconds = time.time() - self.started_at
        if summary:
            self.summary.update(summary)
        logger.info(f"Run {self.run_id} {status} after {self.duration_seconds:.1f}s")
        return self.save(path)

    @classmethod
    def load(cls, path: Union[str, Path]) -> "RunManifest":
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"Manifest not found: {path}")
        with open(path, "r", encoding="utf-8") as f:
            return cls.from_dict(json.load(f))
