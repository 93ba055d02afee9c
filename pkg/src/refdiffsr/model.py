"""Composition of the feature pyramid, texture matcher, and denoiser."""

from __future__ import annotations

import torch
import torch.nn as nn

from .config import ExperimentConfig
from .denoiser import build_denoiser
from .planes import ImagePlane, as_tensor
from .pyramid import FeaturePyramid
from .schedule import CoeffSchedule, build_schedule
from .texture import TextureGuidance, TextureMatcher


class GuidedDiffusionModel(nn.Module):
    """End-to-end trainable model: guidance extraction plus dual prediction."""

    def __init__(self, cfg: ExperimentConfig):
        super().__init__()
        self.cfg = cfg
        self.pyramid = FeaturePyramid(cfg.pyramid)
        self.matcher = TextureMatcher(cfg.texture, self.pyramid)
        self.denoiser = build_denoiser(cfg.denoiser)
        self.schedule: CoeffSchedule = build_schedule(
            cfg.schedule.T, cfg.schedule.beta_bar_T, cfg.schedule.shape
        )

    def guidance(self, lr_up, ref_downup, ref, generator=None) -> TextureGuidance:
        return self.matcher(lr_up, ref_downup, ref, generator=generator)

    def predict(self, noised, lr_up, guid, t):
        """(eps_pred, res_pred) for state `noised` at timestep(s) t in [1, T]."""
        ts = torch.as_tensor(t)
        if ts.min() < 1 or ts.max() > self.schedule.T:
            raise ValueError(f"timestep {t} outside [1, {self.schedule.T}]")
        eps, res = self.denoiser(noised, lr_up, guid, t)
        if isinstance(noised, ImagePlane):
            return noised.with_data(eps, role="noise"), noised.with_data(res, role="residual")
        return eps, res

    def forward(self, noised, lr_up, guid, t):
        return self.predict(noised, lr_up, guid, t)


def batch_guidance(maps_per_item: list[TextureGuidance]) -> list[torch.Tensor]:
    """Stack per-item guidance maps into batched (B, C, H, W) tensors."""
    stacked = []
    for s in range(3):
        stacked.append(torch.stack([as_tensor(g.maps[s]) for g in maps_per_item]))
    return stacked
