import logging
import os
from pathlib import Path
from typing import Any, Dict, List, Literal, Mapping, Optional, Tuple, Union

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .errors import ConfigError

PathLike = Union[str, os.PathLike]

logger = logging.getLogger(__name__)

Horizon = Tuple[int, int]

HORIZON_PRESETS: Dict[str, List[Horizon]] = {
    "voxceleb": [(10, 14), (8, 16), (6, 18)],
    "bair": [(7, 8), (6, 9), (5, 10)],
}


class _Config(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class DataSpec(_Config):
    generator: Literal["forked"] = "forked"
    keypoints: int = Field(5, gt=0)
    train_trajectories: int = Field(1000, gt=0)
    val_trajectories: int = Field(100, gt=0)
    test_trajectories: int = Field(100, gt=0)
    family_size: int = Field(10, gt=0)
    modes: int = Field(2, ge=2)
    noise_std: float = Field(0.01, ge=0.0)
    mode_angle: float = Field(35.0, gt=0.0, lt=90.0)
    speed: float = Field(0.03, gt=0.0)
    articulation: float = Field(0.05, ge=0.0)

    @property
    def dim(self) -> int:
        return 2 * self.keypoints


class ModelSpec(_Config):
    hidden_size: int = Field(64, gt=0)
    flow_layers: int = Field(4, ge=2)
    conditioner_width: int = Field(64, gt=0)
    scale_cap: float = Field(2.0, gt=0.0)


class TrainConfig(_Config):
    epochs: int = Field(60, ge=0)
    batch_size: int = Field(32, gt=0)
    learning_rate: float = Field(1e-3, gt=0.0)
    readout_weight: float = Field(0.5, ge=0.0)
    clip_norm: float = Field(5.0, gt=0.0)
    seed: Optional[int] = None


class SamplerConfig(_Config):
    m: int = Field(2, ge=0)
    proposal_std: float = Field(0.1, gt=0.0)
    anchor: Literal["readout", "flow_at_prior_mean"] = "readout"
    target_energy: Literal["l2", "l2sq"] = "l2"
    lambda_order: Literal["traversal", "layer_index"] = "traversal"
    seed: Optional[int] = None


class MetricsConfig(_Config):
    keep: int = Field(20, gt=0)
    density_points: int = Field(200, ge=2)
    energy_mode: Literal["trajectory", "per_timestep"] = "trajectory"
    mode_share: float = Field(0.1, gt=0.0, le=1.0)


class RunConfig(_Config):
    seed: int = 0
    out_dir: Path = Path("runs/default")
    horizons: List[Horizon] = Field(default_factory=lambda: [(10, 14)], min_length=1)
    samples: int = Field(100, gt=0)
    test_windows: Optional[int] = Field(None, gt=0)
    scheduler: Literal["synchronous", "threads"] = "synchronous"
    data_format: Literal["csv", "h5", "zarr"] = "csv"
    data: DataSpec = Field(default_factory=DataSpec)
    model: ModelSpec = Field(default_factory=ModelSpec)
    train: TrainConfig = Field(default_factory=TrainConfig)
    sampler: SamplerConfig = Field(default_factory=SamplerConfig)
    metrics: MetricsConfig = Field(default_factory=MetricsConfig)

    @model_validator(mode="before")
    @classmethod
    def _propagate_seed(cls, data: Any) -> Any:
        if not isinstance(data, dict):
            return data
        seed = data.get("seed", 0)
        resolved = dict(data)
        for section in ("train", "sampler"):
            value = resolved.get(section)
            if value is None:
                resolved[section] = {"seed": seed}
            elif isinstance(value, dict) and value.get("seed") is None:
                resolved[section] = {**value, "seed": seed}
            elif isinstance(value, BaseModel) and value.seed is None:
                resolved[section] = value.model_copy(update={"seed": seed})
        return resolved

    @model_validator(mode="after")
    def _check(self) -> "RunConfig":
        for m, n in self.horizons:
            if m < 1 or n < 1:
                raise ValueError(
                    f"Horizon ({m}, {n}) needs at least one frame each side"
                )
        if self.metrics.keep > self.samples:
            raise ValueError(
                f"metrics.keep={self.metrics.keep} exceeds samples={self.samples}"
            )
        return self


def _set_dotted(mapping: Dict[str, Any], key: str, value: Any) -> None:
    *parents, leaf = key.split(".")
    node = mapping
    for parent in parents:
        child = node.setdefault(parent, {})
        if not isinstance(child, dict):
            raise ConfigError(f"Cannot set {key}: {parent} is not a mapping")
        node = child
    node[leaf] = value


def parse_override(item: str) -> Tuple[str, Any]:
    """Split `dotted.key=value`; the value is parsed as YAML (numbers, lists, ...)."""
    key, sep, raw = item.partition("=")
    if not sep or not key:
        raise ConfigError(f"Override must look like key=value, got {item!r}")
    try:
        return key.strip(), yaml.safe_load(raw)
    except yaml.YAMLError as e:
        raise ConfigError(f"Cannot parse override {item!r}: {e}") from e


def load_run_config(
    path: Optional[PathLike] = None, overrides: Optional[Mapping[str, Any]] = None
) -> RunConfig:
    logger.debug(f"path={path}, overrides={overrides}")
    raw: Dict[str, Any] = {}
    if path is not None:
        try:
            with Path(path).open("r", encoding="utf-8") as f:
                raw = yaml.safe_load(f) or {}
        except OSError as e:
            raise ConfigError(f"Cannot read config file {path}: {e}") from e
        except yaml.YAMLError as e:
            raise ConfigError(f"Malformed config file {path}: {e}") from e
        if not isinstance(raw, dict):
            raise ConfigError(f"Config file {path} must hold a mapping")
    for key, value in (overrides or {}).items():
        _set_dotted(raw, key, value)
    try:
        return RunConfig.model_validate(raw)
    except ValidationError as e:
        raise ConfigError(f"Invalid configuration:\n{e}") from e


def dump_run_config(config: RunConfig) -> str:
    return yaml.safe_dump(config.model_dump(mode="json"), sort_keys=False)


def write_run_config(config: RunConfig, directory: PathLike) -> Path:
    path = Path(directory) / "config.yaml"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dump_run_config(config), encoding="utf-8")
    logger.debug(f"path={path}")
    return path
