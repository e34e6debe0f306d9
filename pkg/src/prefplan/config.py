"""One structured config for the whole pipeline.

Each stage reads its own section; a run is reproducible from (config,
seed). Profiles are plain YAML files with the same nesting as the
dataclasses; `--set a.b=value` overrides individual leaves.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import yaml

from .attr_model import AttrModelConfig
from .diffusion import DiffusionConfig
from .env import BouncerConfig
from .numerics import AdamConfig
from .planner import SamplerConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class DataConfig:
    steps_per_policy: int = 3000
    episodes_per_policy: int = 10
    horizon: int = 32
    n_pairs: int = 10_000
    equal_band: float = 0.05
    noise_fraction: float = 0.0


@dataclass(frozen=True)
class TrackingConfig:
    episode_len: int = 800
    switch_steps: tuple[int, ...] = (0, 200, 400, 600)
    speed_targets: tuple[float, ...] = (0.5, 0.75, 0.875, 0.3875)
    height_targets: tuple[float, ...] = (0.8, 0.4, 0.7, 0.35)
    n_runs: int = 20
    settle_tol: float = 0.2


@dataclass(frozen=True)
class CoverageConfig:
    cells: int = 20
    n_samples: int = 2000
    episode_len: int = 64
    attr_index: int = 0
    candidates: int = 2


@dataclass(frozen=True)
class EvalConfig:
    episode_len: int = 200
    n_trials: int = 100
    threshold_lo: float = 0.01
    threshold_hi: float = 1.0
    threshold_count: int = 50
    tracking: TrackingConfig = field(default_factory=TrackingConfig)
    coverage: CoverageConfig = field(default_factory=CoverageConfig)


@dataclass(frozen=True)
class NlConfig:
    similarity_threshold: float = 0.2


@dataclass(frozen=True)
class ServiceConfig:
    host: str = "127.0.0.1"
    port: int = 8700
    episode_len: int = 100_000
    frontend_dir: str = ""


@dataclass(frozen=True)
class PipelineConfig:
    seed: int = 0
    env: BouncerConfig = field(default_factory=BouncerConfig)
    data: DataConfig = field(default_factory=DataConfig)
    attr: AttrModelConfig = field(default_factory=AttrModelConfig)
    diffusion: DiffusionConfig = field(default_factory=DiffusionConfig)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    nl: NlConfig = field(default_factory=NlConfig)
    service: ServiceConfig = field(default_factory=ServiceConfig)

    def to_dict(self) -> dict:
        def enc(obj):
            if hasattr(obj, "to_dict"):
                return obj.to_dict()
            if hasattr(obj, "__dataclass_fields__"):
                return {k: enc(getattr(obj, k)) for k in obj.__dataclass_fields__}
            if isinstance(obj, (tuple, list)):
                return [enc(v) for v in obj]
            return obj
        return {k: enc(getattr(self, k)) for k in self.__dataclass_fields__}


def config_hash(cfg: PipelineConfig | dict, sections: list[str] | None = None) -> str:
    d = cfg.to_dict() if isinstance(cfg, PipelineConfig) else cfg
    if sections is not None:
        d = {k: d[k] for k in sections}
    blob = json.dumps(d, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


_SECTION_TYPES = {
    "env": BouncerConfig,
    "data": DataConfig,
    "attr": AttrModelConfig,
    "diffusion": DiffusionConfig,
    "sampler": SamplerConfig,
    "nl": NlConfig,
    "service": ServiceConfig,
}


def _build_section(cls, data: dict):
    if cls in (AttrModelConfig, DiffusionConfig):
        return cls.from_dict(data)
    if cls is EvalConfig:
        data = dict(data)
        tr = data.pop("tracking", None)
        cov = data.pop("coverage", None)
        kwargs = {k: tuple(v) if isinstance(v, list) else v for k, v in data.items()}
        out = EvalConfig(**kwargs)
        if tr:
            out = replace(out, tracking=TrackingConfig(
                **{k: tuple(v) if isinstance(v, list) else v for k, v in tr.items()}))
        if cov:
            out = replace(out, coverage=CoverageConfig(**cov))
        return out
    kwargs = {k: tuple(v) if isinstance(v, list) else v for k, v in data.items()}
    return cls(**kwargs)


def config_from_dict(data: dict) -> PipelineConfig:
    cfg = PipelineConfig()
    try:
        for key, section in data.items():
            if key == "seed":
                cfg = replace(cfg, seed=int(section))
            elif key == "eval":
                cfg = replace(cfg, eval=_build_section(EvalConfig, section))
            elif key in _SECTION_TYPES:
                cfg = replace(cfg, **{key: _build_section(_SECTION_TYPES[key], section)})
            else:
                raise ConfigError(f"unknown config section {key!r}")
    except (TypeError, ValueError) as e:
        if isinstance(e, ConfigError):
            raise
        raise ConfigError(str(e)) from e
    return cfg


def _apply_override(data: dict, dotted: str):
    if "=" not in dotted:
        raise ConfigError(f"override must look like section.key=value, got {dotted!r}")
    path, raw = dotted.split("=", 1)
    keys = path.strip().split(".")
    node = data
    for k in keys[:-1]:
        node = node.setdefault(k, {})
        if not isinstance(node, dict):
            raise ConfigError(f"cannot descend into {k!r} in override {dotted!r}")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    node[keys[-1]] = value


def load_config(path: str | Path | None = None, overrides: list[str] = ()) -> PipelineConfig:
    """Defaults, optionally updated from a YAML profile, then dotted overrides."""
    data: dict = {}
    if path is not None:
        with open(path, encoding="utf-8") as f:
            loaded = yaml.safe_load(f) or {}
        if not isinstance(loaded, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
        data = _merge(PipelineConfig().to_dict(), loaded)
    else:
        data = PipelineConfig().to_dict()
    for ov in overrides:
        _apply_override(data, ov)
    return config_from_dict(data)


def _merge(base: dict, update: dict) -> dict:
    out = dict(base)
    for k, v in update.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def demo_profile_path() -> Path:
    return Path(__file__).parent / "assets" / "demo.yaml"
