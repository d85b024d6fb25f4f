"""Schema-validated pipeline configuration: one JSON document covering every
tunable knob, with defaults for all of them."""

from __future__ import annotations

import json
from dataclasses import dataclass, fields, asdict
from pathlib import Path

from .classifiers import CascadeTrainConfig, SvmTrainConfig
from .detector import ScanParams
from .floors import FloorConfig
from .hog import HogParams
from .spacing import GmmModel, SpacingFitConfig
from .synthgen import SynthConfig, DEFAULT_SPACING_MODEL


@dataclass(frozen=True)
class SpacingConfig:
    fit: SpacingFitConfig = SpacingFitConfig()
    k_min: int = 1
    k_max: int = 3
    bins: int = 200
    s_max: float = 4.0
    tau: float | None = None   # None: quarter of the fitted peak density

    @property
    def k_range(self) -> range:
        return range(self.k_min, self.k_max + 1)


@dataclass(frozen=True)
class EvalConfig:
    iou_threshold: float = 0.5


@dataclass(frozen=True)
class PipelineConfig:
    scan: ScanParams = ScanParams()
    hog: HogParams = HogParams()
    svm: SvmTrainConfig = SvmTrainConfig()
    cascade: CascadeTrainConfig = CascadeTrainConfig()
    floor: FloorConfig = FloorConfig()
    spacing: SpacingConfig = SpacingConfig()
    eval: EvalConfig = EvalConfig()
    synth: SynthConfig = SynthConfig()
    seed: int = 0


class ConfigError(ValueError):
    """Malformed configuration document."""


def _build(cls, data, path):
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected an object, got {type(data).__name__}")
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"{path}: unknown keys {sorted(unknown)}")
    kwargs = {}
    for f in fields(cls):
        if f.name not in data:
            continue
        value = data[f.name]
        kwargs[f.name] = _coerce(cls, f.name, value, f"{path}.{f.name}")
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc


_NESTED = {
    (PipelineConfig, "scan"): ScanParams,
    (PipelineConfig, "hog"): HogParams,
    (PipelineConfig, "svm"): SvmTrainConfig,
    (PipelineConfig, "cascade"): CascadeTrainConfig,
    (PipelineConfig, "floor"): FloorConfig,
    (PipelineConfig, "spacing"): SpacingConfig,
    (PipelineConfig, "eval"): EvalConfig,
    (PipelineConfig, "synth"): SynthConfig,
    (SpacingConfig, "fit"): SpacingFitConfig,
}


def _coerce(cls, name, value, path):
    nested = _NESTED.get((cls, name))
    if nested is not None:
        return _build(nested, value, path)
    if cls is SynthConfig and name == "spacing_model":
        if not isinstance(value, dict) or set(value) - {"weights", "means", "variances"}:
            raise ConfigError(f"{path}: expected weights/means/variances object")
        return GmmModel(weights=tuple(value["weights"]), means=tuple(value["means"]),
                        variances=tuple(value["variances"]))
    if cls is CascadeTrainConfig and name == "hog_schedule":
        if value is None:
            return None
        return tuple(_build(HogParams, v, f"{path}[{i}]") for i, v in enumerate(value))
    if cls is SynthConfig and name == "floor_ys":
        return tuple(value)
    return value


def config_from_dict(data: dict) -> PipelineConfig:
    return _build(PipelineConfig, data, "config")


def config_to_dict(cfg: PipelineConfig) -> dict:
    d = asdict(cfg)
    d["synth"]["spacing_model"] = {
        "weights": list(cfg.synth.spacing_model.weights),
        "means": list(cfg.synth.spacing_model.means),
        "variances": list(cfg.synth.spacing_model.variances),
    }
    sched = cfg.cascade.hog_schedule
    d["cascade"]["hog_schedule"] = None if sched is None else [asdict(p) for p in sched]
    return d


def load_config(path) -> PipelineConfig:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    try:
        data = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON in {p}: {exc}") from exc
    return config_from_dict(data)


def apply_overrides(cfg: PipelineConfig, overrides: list[str]) -> PipelineConfig:
    """Apply `section.field=value` overrides on top of a config; values are
    parsed as JSON when possible, otherwise taken as strings."""
    data = config_to_dict(cfg)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override must look like section.field=value: {item!r}")
        key, raw = item.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        parts = key.split(".")
        node = data
        for part in parts[:-1]:
            if not isinstance(node.get(part), dict):
                raise ConfigError(f"unknown config section {key!r}")
            node = node[part]
        if parts[-1] not in node:
            raise ConfigError(f"unknown config key {key!r}")
        node[parts[-1]] = value
    return config_from_dict(data)
