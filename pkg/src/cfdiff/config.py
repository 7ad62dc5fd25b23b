"""Strict JSON run configuration shared by every CLI command.

Every field has a default. Unknown keys are rejected. Defaults describe the
desk-scale experiment (32x32 phantoms, 200 diffusion steps, 3000 training
steps of batch 32) rather than the paper-scale library defaults.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .denoiser import DenoiserConfig
from .errors import ConfigError
from .phantom import PhantomSpec
from .trainer import TrainConfig


@dataclass(frozen=True)
class DataSection:
    phantom: PhantomSpec = field(default_factory=PhantomSpec)
    n: int = 2000
    healthy_fraction: float = 0.5
    seed: int = 0


@dataclass(frozen=True)
class ScheduleSection:
    T: int = 200
    beta_start: float = 5e-4
    beta_end: float = 0.1


@dataclass(frozen=True)
class SampleSection:
    seed: int = 0
    clip_x0: bool = True
    known_region_mode: str = "posterior"
    record_trajectory: bool = False
    guidance_scale: float = 1.0          # healthy-target guidance for removal/segmentation
    generation_scale: float = 10.0       # unhealthy-target guidance for tumour regeneration
    noising_depth: int | None = None     # baseline depth L, None means T // 2
    prompt_dilation: int = 2
    min_contrast: float = 0.15
    batch_size: int = 50


@dataclass(frozen=True)
class EvalSection:
    test_n: int = 200
    transfer_n: int = 50
    metrics_path: str = "table1.json"


@dataclass(frozen=True)
class RunConfig:
    data: DataSection = field(default_factory=DataSection)
    model: DenoiserConfig = field(default_factory=lambda: DenoiserConfig(base_width=16))
    schedule: ScheduleSection = field(default_factory=ScheduleSection)
    # batch 32 instead of 128, so the step size is raised to match
    train: TrainConfig = field(default_factory=lambda: TrainConfig(
        learning_rate=6e-4, batch_size=32, steps=3000, log_every=1))
    sample: SampleSection = field(default_factory=SampleSection)
    eval: EvalSection = field(default_factory=EvalSection)

    def to_dict(self) -> dict:
        return _to_plain(self)

    def replace(self, section: str, **changes) -> "RunConfig":
        return dataclasses.replace(self, **{section: dataclasses.replace(getattr(self, section),
                                                                         **changes)})


def _to_plain(obj):
    if dataclasses.is_dataclass(obj):
        return {f.name: _to_plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, tuple):
        return [_to_plain(v) for v in obj]
    return obj


def _merge(base, raw, where: str):
    """Overlay a parsed JSON object onto a dataclass instance, recursing into sections."""
    if not isinstance(raw, dict):
        raise ConfigError(f"{where}: expected an object")
    names = {f.name for f in dataclasses.fields(base)}
    unknown = set(raw) - names
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    changes = {}
    for name, value in raw.items():
        current = getattr(base, name)
        if dataclasses.is_dataclass(current):
            changes[name] = _merge(current, value, f"{where}.{name}")
        else:
            changes[name] = value
    try:
        return dataclasses.replace(base, **changes)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def parse_config(raw: dict) -> RunConfig:
    cfg = _merge(RunConfig(), raw, "config")
    if cfg.model.channels_in != cfg.data.phantom.C:
        raise ConfigError("model.channels_in must equal data.phantom.C")
    if cfg.sample.known_region_mode not in ("posterior", "marginal"):
        raise ConfigError("sample.known_region_mode must be 'posterior' or 'marginal'")
    return cfg


def load_config(path) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        raw = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return parse_config(raw)


def dump_config(cfg: RunConfig) -> str:
    return json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n"
