"""Run configuration: YAML sections mirroring the harness's components.

Every default is materialized at load time and the resolved snapshot is
written into the run ledger, so a run is reproducible from its ledger alone.
Unknown keys are errors.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, asdict
from pathlib import Path
from typing import Optional

import yaml

from .augment import AugmentationConfig
from .errors import UsageError
from .evaluation import ProbeConfig
from .models import EncoderSpec, ProjectorSpec
from .training import TrainConfig

METHODS = ("sscil", "finetune", "icarl", "joint-ssl", "joint-supervised")
SCHEMES = ("random", "semantic", "cluster")


@dataclass
class DataConfig:
    manifest: str = ""
    grouping: Optional[str] = None
    features: Optional[str] = None
    base_dir: Optional[str] = None


@dataclass
class SchemeConfig:
    name: str = "random"
    phases: int = 5
    seed: int = 0


@dataclass
class ProjectorConfig:
    depth: int = 3
    width: int = 2048
    inherit: bool = True


@dataclass
class RunConfig:
    data: DataConfig = field(default_factory=DataConfig)
    scheme: SchemeConfig = field(default_factory=SchemeConfig)
    method: str = "sscil"
    train: TrainConfig = field(default_factory=TrainConfig)
    augment: AugmentationConfig = field(default_factory=AugmentationConfig)
    encoder: EncoderSpec = field(default_factory=EncoderSpec)
    projector: ProjectorConfig = field(default_factory=ProjectorConfig)
    probe: ProbeConfig = field(default_factory=ProbeConfig)
    output_dir: str = "runs"
    run_id: Optional[str] = None
    run_seed: int = 0
    deterministic: bool = True

    def validate(self) -> None:
        if self.method not in METHODS:
            raise UsageError(f"unknown method {self.method!r}; choose from {METHODS}")
        if self.scheme.name not in SCHEMES:
            raise UsageError(
                f"unknown scheme {self.scheme.name!r}; choose from {SCHEMES}"
            )
        if not self.data.manifest:
            raise UsageError("config is missing data.manifest")
        self.augment.validate()
        self.encoder.validate()

    def projector_spec(self) -> ProjectorSpec:
        return ProjectorSpec(self.projector.depth, self.projector.width)

    def to_dict(self) -> dict:
        return asdict(self)


_SECTION_TYPES = {
    "data": DataConfig,
    "scheme": SchemeConfig,
    "train": TrainConfig,
    "augment": AugmentationConfig,
    "encoder": EncoderSpec,
    "projector": ProjectorConfig,
    "probe": ProbeConfig,
}
_TUPLE_FIELDS = {
    "crop_scale", "crop_ratio", "blur_prob", "blur_sigma", "solarize_prob",
}


def _build_section(cls, raw: dict, section: str):
    known = {f.name for f in fields(cls)}
    unknown = set(raw) - known
    if unknown:
        raise UsageError(
            f"unknown key(s) {sorted(unknown)} in config section {section!r}"
        )
    coerced = {
        k: tuple(v) if k in _TUPLE_FIELDS and isinstance(v, list) else v
        for k, v in raw.items()
    }
    return cls(**coerced)


def config_from_dict(raw: dict) -> RunConfig:
    if not isinstance(raw, dict):
        raise UsageError("config root must be a mapping")
    cfg = RunConfig()
    scalar_fields = {f.name for f in fields(RunConfig)} - set(_SECTION_TYPES)
    for key, value in raw.items():
        if key in _SECTION_TYPES:
            if not isinstance(value, dict):
                raise UsageError(f"config section {key!r} must be a mapping")
            setattr(cfg, key, _build_section(_SECTION_TYPES[key], value, key))
        elif key in scalar_fields:
            setattr(cfg, key, value)
        else:
            raise UsageError(f"unknown config key {key!r}")
    return cfg


def load_run_config(path, overrides: Optional[dict] = None) -> RunConfig:
    try:
        raw = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
    except yaml.YAMLError as e:
        raise UsageError(f"{path}: invalid YAML: {e}") from None
    if overrides:
        raw = _merge(raw, overrides)
    cfg = config_from_dict(raw)
    cfg.validate()
    return cfg


def _merge(base: dict, over: dict) -> dict:
    out = dict(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def save_run_config(cfg: RunConfig, path) -> None:
    Path(path).write_text(
        yaml.safe_dump(cfg.to_dict(), sort_keys=True), encoding="utf-8"
    )
