"""Configuration management for subgraph information bottleneck training."""

from pathlib import Path
from typing import Any, Dict, Literal, Mapping, Optional, Tuple

from dotenv import dotenv_values
from pydantic import BaseModel, Field, ValidationError, field_validator, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from .errors import ConfigError


class Settings(BaseSettings):
    """Application settings, read from SIB_* environment variables and .env."""

    model_config = SettingsConfigDict(
        env_prefix="SIB_",
        env_file=".env",
        env_file_encoding="utf-8",
        extra="ignore",
    )

    # Paths
    data_root: Path = Field(default=Path("./data"))
    output_dir: Path = Field(default=Path("./runs"))
    log_level: str = Field(default="INFO")

    # Objective weights
    alpha: float = Field(default=5.0)
    beta: float = Field(default=0.1)

    # Bi-level schedule
    inner_steps: int = Field(default=20)
    outer_steps: int = Field(default=200)
    eta1: float = Field(default=0.05)
    eta2: float = Field(default=0.01)
    optimizer: str = Field(default="adam")

    # Architecture
    hidden: int = Field(default=16)
    num_layers: int = Field(default=2)

    # Relaxation
    relaxation: str = Field(default="softmax")
    tau: float = Field(default=1.0)

    seed: int = Field(default=0)

    def setup_directories(self):
        """Create necessary directories."""
        self.data_root.mkdir(parents=True, exist_ok=True)
        self.output_dir.mkdir(parents=True, exist_ok=True)

    def resolve_dataset(self, path: Path) -> Path:
        """Resolve a dataset path relative to the data root when it does not exist as given."""
        path = Path(path)
        if path.exists() or path.is_absolute():
            return path
        candidate = self.data_root / path
        return candidate if candidate.exists() else path


settings = Settings()
settings.setup_directories()


class TrainConfig(BaseModel):
    """Hyper-parameters of one training run."""

    model_config = {"extra": "forbid"}

    alpha: float = Field(default=5.0, ge=0.0)
    beta: float = Field(default=0.1, ge=0.0)
    inner_steps: int = Field(default=20, ge=1)
    outer_steps: int = Field(default=200, ge=1)
    eta1: float = Field(default=0.05, gt=0.0)
    eta2: float = Field(default=0.01, gt=0.0)
    seed: int = Field(default=0, ge=0)
    relaxation: Literal["softmax", "gumbel"] = "softmax"
    tau: float = Field(default=1.0, gt=0.0)
    inference_threshold: Optional[float] = Field(default=None, ge=0.0, le=1.0)

    hidden: int = Field(default=16, ge=1)
    num_layers: int = Field(default=2, ge=1)
    optimizer: Literal["adam", "sgd"] = "adam"
    batch_size: Optional[int] = Field(default=None, ge=2)
    drop_edge: float = Field(default=0.0, ge=0.0, le=1.0)
    reinit_statistics: bool = True

    mode: Literal["sib", "gcn", "att"] = "sib"
    att_ratio: float = Field(default=0.5, gt=0.0, le=1.0)

    split: Tuple[float, float, float] = (0.7, 0.05, 0.25)
    eval_every: int = Field(default=1, ge=1)
    progress: bool = False

    @field_validator("split", mode="before")
    @classmethod
    def _parse_split(cls, value: Any) -> Any:
        if isinstance(value, str):
            return tuple(float(part) for part in value.split(","))
        return value

    @model_validator(mode="after")
    def _check_split(self) -> "TrainConfig":
        if any(f < 0 for f in self.split) or sum(self.split) > 1.0 + 1e-9:
            raise ValueError("split fractions must be nonnegative and sum to at most 1")
        return self

    @classmethod
    def from_settings(cls, base: Optional[Settings] = None, **overrides: Any) -> "TrainConfig":
        """Create a training config from application settings."""
        base = base or settings
        values: Dict[str, Any] = {
            "alpha": base.alpha,
            "beta": base.beta,
            "inner_steps": base.inner_steps,
            "outer_steps": base.outer_steps,
            "eta1": base.eta1,
            "eta2": base.eta2,
            "optimizer": base.optimizer,
            "hidden": base.hidden,
            "num_layers": base.num_layers,
            "relaxation": base.relaxation,
            "tau": base.tau,
            "seed": base.seed,
        }
        values.update(overrides)
        return build_config(values)


def build_config(values: Mapping[str, Any]) -> TrainConfig:
    """Validate raw values into a TrainConfig, raising ConfigError on the first bad key."""
    unknown = sorted(set(values) - set(TrainConfig.model_fields))
    if unknown:
        raise ConfigError(f"Unknown config key: {unknown[0]}", key=unknown[0])
    try:
        return TrainConfig(**values)
    except ValidationError as e:
        error = e.errors()[0]
        key = ".".join(str(part) for part in error["loc"]) or "split"
        raise ConfigError(f"Invalid value for '{key}': {error['msg']}", key=key) from e


def load_config_file(path: Path) -> Dict[str, Any]:
    """Read a key=value config file; empty values are dropped."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Config file not found: {path}")
    raw = dotenv_values(path)
    return {key.strip().lower(): value for key, value in raw.items() if value not in (None, "")}


def resolve_config(
    config_file: Optional[Path] = None,
    flags: Optional[Mapping[str, Any]] = None,
    base: Optional[Settings] = None,
) -> TrainConfig:
    """Merge settings < config file < explicit flags into a validated TrainConfig."""
    overrides: Dict[str, Any] = {}
    if config_file is not None:
        overrides.update(load_config_file(config_file))
    if flags:
        overrides.update({key: value for key, value in flags.items() if value is not None})
    return TrainConfig.from_settings(base, **overrides)
