"""
Typed run configuration.

A run is described by one JSON document whose nested keys mirror
:class:`RunConfig`; command-line flags are merged on top (flag wins).
"""
import json
import logging
from pathlib import Path
from typing import List, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from spatiospatial.utils.errors import ConfigError

logger = logging.getLogger(__name__)


class ModelConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    num_classes: int = Field(3, ge=2)
    in_channels: int = Field(1, ge=1)
    dropout_p: float = Field(0.3, ge=0.0, lt=1.0)


class TrainConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    learning_rate: float = Field(1e-5, gt=0.0)
    weight_decay: float = Field(1e-3, ge=0.0)
    batch_size: int = Field(1, ge=1)
    epochs: int = Field(100, ge=0)
    seed: int = Field(0, ge=0)
    augment: bool = True
    beta1: float = Field(0.9, gt=0.0, lt=1.0)
    beta2: float = Field(0.999, gt=0.0, lt=1.0)
    eps: float = Field(1e-8, gt=0.0)
    class_weighting: bool = True


class AugmentConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    scale_range: Tuple[float, float] = (0.9, 1.2)
    max_rotation_deg: float = Field(10.0, ge=0.0)
    flip_probability: float = Field(0.25, ge=0.0, le=1.0)
    enabled: bool = True

    @field_validator("scale_range")
    @classmethod
    def _ordered_positive(cls, value):
        lo, hi = value
        if lo <= 0 or hi < lo:
            raise ValueError(f"scale range must be positive and ordered, got {value}")
        return value


class RunConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    architecture: str = "mixedconv"
    model: ModelConfig = ModelConfig()
    train: TrainConfig = TrainConfig()
    augment: AugmentConfig = AugmentConfig()
    manifest: Optional[Path] = None
    k: int = Field(3, ge=1)
    train_ratio: float = Field(0.7, gt=0.0, lt=1.0)
    out_dir: Path = Path("runs/latest")
    checkpoint: Optional[Path] = None
    skip_prefixes: List[str] = ["stem", "fc"]
    freeze_loaded: bool = False
    fold: int = Field(0, ge=0)

    @field_validator("architecture")
    @classmethod
    def _known_architecture(cls, value):
        from spatiospatial.models.resnets import parse_architecture
        return parse_architecture(value).value

    @model_validator(mode="after")
    def _fold_in_range(self):
        if self.fold >= self.k:
            raise ValueError(f"fold {self.fold} out of range for k={self.k}")
        return self

    def validate_paths(self, need_manifest=True):
        """Check referenced paths exist and the output directory is creatable."""
        if need_manifest:
            if self.manifest is None:
                raise ConfigError("a manifest path is required (--manifest or config 'manifest')")
            if not Path(self.manifest).is_file():
                raise ConfigError(f"manifest not found: {self.manifest}")
        if self.checkpoint is not None and not Path(self.checkpoint).is_file():
            raise ConfigError(f"checkpoint not found: {self.checkpoint}")
        try:
            Path(self.out_dir).mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise ConfigError(f"cannot create output directory {self.out_dir}: {exc}") from exc
        return self


def _merge(base, override):
    merged = dict(base)
    for key, value in override.items():
        if value is None:
            continue
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def load_run_config(path=None, overrides=None):
    """
    Build a RunConfig from an optional JSON file plus flag overrides.
    Args:
        path (str or Path): JSON config file.
        overrides (dict): Nested values from flags; None values are ignored.
    Returns:
        RunConfig
    Raises:
        ConfigError: unreadable file or invalid values.
    """
    data = {}
    if path is not None:
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"config {path} must hold a JSON object")
    data = _merge(data, overrides or {})
    try:
        return RunConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(f"invalid configuration: {exc}") from exc
