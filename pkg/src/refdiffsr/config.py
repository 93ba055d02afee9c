"""Experiment configuration: declarative YAML document plus dotted overrides."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .denoiser import DenoiserConfig
from .pyramid import PyramidConfig
from .texture import TextureConfig


class ConfigError(ValueError):
    pass


@dataclass
class ScheduleSection:
    T: int = 1000
    beta_bar_T: float = 0.1
    shape: str = "uniform"


@dataclass
class SamplerSection:
    steps: int = 10
    eta: float = 1.0


@dataclass
class LossSection:
    lambda_diffusion: float = 1.0
    lambda_pixel: float = 1e-3
    lambda_perceptual: float = 1e-4
    lambda_res: float = 1.0
    lambda_eps: float = 1.0
    perceptual: str = "seeded-conv"


@dataclass
class OptimSection:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.99
    iterations: int = 300_000
    batch_size: int = 2
    grad_clip: float = 1.0


@dataclass
class DataSection:
    manifest: str = ""
    sr_factor: int = 4
    pairing: str = "same-category"
    image_channels: int = 3


@dataclass
class RunSection:
    out_dir: str = "runs/default"
    log_every: int = 50
    checkpoint_every: int = 1000
    val_every: int = 500
    single_threaded: bool = False


@dataclass
class ExperimentConfig:
    seed: int = 0
    schedule: ScheduleSection = field(default_factory=ScheduleSection)
    sampler: SamplerSection = field(default_factory=SamplerSection)
    denoiser: DenoiserConfig = field(default_factory=DenoiserConfig)
    pyramid: PyramidConfig = field(default_factory=PyramidConfig)
    texture: TextureConfig = field(default_factory=TextureConfig)
    loss: LossSection = field(default_factory=LossSection)
    optim: OptimSection = field(default_factory=OptimSection)
    data: DataSection = field(default_factory=DataSection)
    run: RunSection = field(default_factory=RunSection)

    def __post_init__(self):
        if self.pyramid.widths != self.denoiser.guidance_channels:
            # Guidance maps are pyramid features; keep the widths in lockstep.
            self.denoiser = dataclasses.replace(
                self.denoiser, guidance_channels=tuple(self.pyramid.widths)
            )

    @classmethod
    def paper_defaults(cls) -> "ExperimentConfig":
        """Full-scale configuration matching the published training recipe."""
        return cls(
            schedule=ScheduleSection(T=1000, beta_bar_T=0.1, shape="uniform"),
            sampler=SamplerSection(steps=10, eta=1.0),
            denoiser=DenoiserConfig(
                variant="dual",
                image_channels=3,
                base_channels=64,
                channel_multipliers=(1, 2, 4, 8),
                num_blocks=2,
                time_embed_dim=256,
                guidance_channels=(64, 96, 128),
            ),
            pyramid=PyramidConfig(in_channels=3, widths=(64, 96, 128), block_counts=(2, 2, 2)),
            texture=TextureConfig(patch_size=3, stride=1, k_max=10),
            loss=LossSection(),
            optim=OptimSection(lr=1e-4, beta1=0.9, beta2=0.99, iterations=300_000, batch_size=2),
        )

    @classmethod
    def toy_defaults(cls) -> "ExperimentConfig":
        """CPU-sized configuration for desk-scale runs and the test suite."""
        return cls(
            schedule=ScheduleSection(T=1000, beta_bar_T=0.1, shape="uniform"),
            sampler=SamplerSection(steps=10, eta=0.0),
            denoiser=DenoiserConfig(
                variant="shared",
                image_channels=3,
                base_channels=16,
                channel_multipliers=(1, 2, 2, 4),
                num_blocks=1,
                time_embed_dim=64,
                guidance_channels=(8, 12, 16),
            ),
            pyramid=PyramidConfig(in_channels=3, widths=(8, 12, 16), block_counts=(1, 1, 1)),
            texture=TextureConfig(patch_size=3, stride=2, k_max=10),
            optim=OptimSection(lr=2e-3, iterations=2000, batch_size=1),
        )


_SECTIONS = {f.name: f.type for f in dataclasses.fields(ExperimentConfig)}


def _build_section(cls, values: dict, path: str):
    known = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, val in values.items():
        if key not in known:
            raise ConfigError(f"unknown config key {path}.{key}")
        if isinstance(val, list):
            val = tuple(val)
        kwargs[key] = val
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad section {path}: {exc}") from exc


def config_from_dict(raw: dict) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config document must be a mapping")
    kwargs = {}
    for key, val in raw.items():
        if key == "seed":
            kwargs["seed"] = int(val)
            continue
        if key not in _SECTIONS:
            raise ConfigError(f"unknown config section {key!r}")
        section_cls = ExperimentConfig.__dataclass_fields__[key].default_factory
        kwargs[key] = _build_section(section_cls, val or {}, key)
    return ExperimentConfig(**kwargs)


def config_to_dict(cfg: ExperimentConfig) -> dict:
    return dataclasses.asdict(cfg)


def load_config(path) -> ExperimentConfig:
    with open(path) as f:
        raw = yaml.safe_load(f) or {}
    return config_from_dict(raw)


def save_config(cfg: ExperimentConfig, path) -> None:
    Path(path).write_text(yaml.safe_dump(config_to_dict(cfg), sort_keys=True))


def _coerce(old, text: str):
    if isinstance(old, bool):
        if text.lower() in ("1", "true", "yes", "on"):
            return True
        if text.lower() in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"cannot parse boolean from {text!r}")
    if isinstance(old, int) and not isinstance(old, bool):
        return int(text)
    if isinstance(old, float):
        return float(text)
    if isinstance(old, (tuple, list)):
        parts = [p for p in text.replace("[", "").replace("]", "").split(",") if p.strip()]
        elem = old[0] if len(old) else 1
        return tuple(type(elem)(p.strip()) for p in parts)
    return text


def apply_overrides(cfg: ExperimentConfig, overrides: list[str]) -> ExperimentConfig:
    """Apply `section.key=value` strings on top of a config."""
    doc = config_to_dict(cfg)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form path=value")
        dotted, text = item.split("=", 1)
        keys = dotted.strip().split(".")
        node = doc
        for k in keys[:-1]:
            if k not in node or not isinstance(node[k], dict):
                raise ConfigError(f"unknown config path {dotted!r}")
            node = node[k]
        leaf = keys[-1]
        if leaf not in node:
            raise ConfigError(f"unknown config path {dotted!r}")
        node[leaf] = _coerce(node[leaf], text.strip())
    return config_from_dict(doc)


def config_hash(cfg: ExperimentConfig) -> str:
    canon = json.dumps(config_to_dict(cfg), sort_keys=True, default=list)
    return hashlib.sha256(canon.encode()).hexdigest()
