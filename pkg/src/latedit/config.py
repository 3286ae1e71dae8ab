"""YAML configuration: schedule parameters, guidance scales, loss weights and
camera setup, with an environment-variable override for the file path."""

from __future__ import annotations

import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

import yaml

from .core import CameraConfig, GuidanceConfig, LossWeights, NoiseSchedule
from .errors import ConfigError

CONFIG_ENV_VAR = "LATEDIT_CONFIG"


@dataclass(frozen=True)
class ScheduleSettings:
    """How to construct the diffusion noise schedule."""

    kind: str = "cosine"  # "cosine" or "linear-test"
    steps: int = 1024
    cosine_s: float = 0.008

    def build(self) -> NoiseSchedule:
        if self.kind == "cosine":
            return NoiseSchedule.cosine(steps=self.steps, s=self.cosine_s)
        if self.kind == "linear-test":
            return NoiseSchedule.linear_test(steps=self.steps)
        raise ConfigError(f"unknown schedule kind {self.kind!r}")


@dataclass(frozen=True)
class AppConfig:
    schedule: ScheduleSettings = field(default_factory=ScheduleSettings)
    guidance_global: GuidanceConfig = field(default_factory=GuidanceConfig)
    guidance_local: GuidanceConfig = field(default_factory=GuidanceConfig.local_default)
    loss_weights: LossWeights = field(default_factory=LossWeights)
    camera_train: CameraConfig = field(default_factory=CameraConfig)
    camera_eval: CameraConfig = field(
        default_factory=lambda: CameraConfig(render_resolution=256)
    )
    tau: int = 200
    inference_seed: int = 0

    def to_dict(self) -> dict:
        d = asdict(self)
        for key in ("camera_train", "camera_eval"):
            d[key]["azimuth_range_deg"] = list(d[key]["azimuth_range_deg"])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "AppConfig":
        try:
            cameras = {}
            for key in ("camera_train", "camera_eval"):
                raw = dict(d.get(key, {}))
                if "azimuth_range_deg" in raw:
                    raw["azimuth_range_deg"] = tuple(raw["azimuth_range_deg"])
                cameras[key] = CameraConfig(**raw)
            return cls(
                schedule=ScheduleSettings(**d.get("schedule", {})),
                guidance_global=GuidanceConfig(**d.get("guidance_global", {})),
                guidance_local=GuidanceConfig(**d.get("guidance_local", {})),
                loss_weights=LossWeights(**d.get("loss_weights", {})),
                camera_train=cameras["camera_train"],
                camera_eval=cameras["camera_eval"],
                tau=int(d.get("tau", 200)),
                inference_seed=int(d.get("inference_seed", 0)),
            )
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid configuration: {exc}") from exc


def default_config() -> AppConfig:
    return AppConfig()


def save_config(config: AppConfig, path: str | Path) -> None:
    Path(path).write_text(yaml.safe_dump(config.to_dict(), sort_keys=True))


def load_config(path: str | Path | None = None) -> AppConfig:
    """Load configuration from ``path``, falling back to $LATEDIT_CONFIG and
    then to built-in defaults."""
    if path is None:
        path = os.environ.get(CONFIG_ENV_VAR)
    if path is None:
        return default_config()
    try:
        raw = yaml.safe_load(Path(path).read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"could not parse {path}: {exc}") from exc
    if raw is None:
        return default_config()
    if not isinstance(raw, dict):
        raise ConfigError(f"top level of {path} must be a mapping")
    return AppConfig.from_dict(raw)
