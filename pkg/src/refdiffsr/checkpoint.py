"""Versioned checkpoints: a manifest plus named parameter arrays."""

from __future__ import annotations

from pathlib import Path

import numpy as np
import torch

from .config import ExperimentConfig, config_from_dict, config_hash, config_to_dict

FORMAT_VERSION = 1


class CheckpointMismatch(RuntimeError):
    pass


def save_checkpoint(
    path,
    model: torch.nn.Module,
    cfg: ExperimentConfig,
    schedule,
    step: int,
    metrics: dict | None = None,
) -> None:
    payload = {
        "format_version": FORMAT_VERSION,
        "config_hash": config_hash(cfg),
        "config": config_to_dict(cfg),
        "step": int(step),
        "metrics": dict(metrics or {}),
        "schedule": {
            "alphas": np.asarray(schedule.alphas),
            "betas": np.asarray(schedule.betas),
        },
        "params": model.state_dict(),
    }
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    torch.save(payload, path)


def load_checkpoint(path, cfg: ExperimentConfig | None = None) -> dict:
    """Load a checkpoint, refusing configs whose hash does not match."""
    payload = torch.load(path, map_location="cpu", weights_only=False)
    version = payload.get("format_version")
    if version != FORMAT_VERSION:
        raise CheckpointMismatch(f"{path}: unsupported checkpoint version {version}")
    if cfg is not None and payload["config_hash"] != config_hash(cfg):
        raise CheckpointMismatch(
            f"{path}: checkpoint was written under a different configuration "
            f"({payload['config_hash'][:12]} != {config_hash(cfg)[:12]})"
        )
    return payload


def checkpoint_config(payload: dict) -> ExperimentConfig:
    return config_from_dict(payload["config"])
