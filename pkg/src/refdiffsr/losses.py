"""Composite training objective: diffusion, pixel, and perceptual terms."""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn

from .planes import as_tensor


@dataclass
class LossWeights:
    lambda_diffusion: float = 1.0
    lambda_pixel: float = 1e-3
    lambda_perceptual: float = 1e-4
    lambda_res: float = 1.0
    lambda_eps: float = 1.0


def _pair(a, b):
    ta, tb = as_tensor(a), as_tensor(b)
    if ta.shape != tb.shape:
        raise ValueError(f"shape mismatch: {tuple(ta.shape)} vs {tuple(tb.shape)}")
    return ta, tb


def diffusion_loss(res_true, res_pred, eps_true, eps_pred, w: LossWeights) -> torch.Tensor:
    """Reweighted MSE on the predicted residual and noise components."""
    rt, rp = _pair(res_true, res_pred)
    et, ep = _pair(eps_true, eps_pred)
    return w.lambda_res * torch.mean((rt - rp) ** 2) + w.lambda_eps * torch.mean((et - ep) ** 2)


def pixel_loss(sr, hr) -> torch.Tensor:
    """Mean absolute pixel error between the reconstruction and the target."""
    a, b = _pair(sr, hr)
    return torch.mean(torch.abs(a - b))


def perceptual_loss(sr, hr, extractor) -> torch.Tensor:
    """Mean squared distance in the extractor's feature space."""
    a, b = _pair(sr, hr)
    fa = extractor(a)
    fb = extractor(b)
    return torch.mean((fa - fb) ** 2)


def total_loss(diffusion, pixel, perceptual, w: LossWeights) -> torch.Tensor:
    """Weighted sum of the three parts; rejects non-finite inputs."""
    parts = {"diffusion": diffusion, "pixel": pixel, "perceptual": perceptual}
    for name, p in parts.items():
        val = p.detach() if torch.is_tensor(p) else torch.as_tensor(p)
        if not torch.isfinite(val).all():
            raise FloatingPointError(f"{name} loss is non-finite: {val}")
    return (
        w.lambda_diffusion * parts["diffusion"]
        + w.lambda_pixel * parts["pixel"]
        + w.lambda_perceptual * parts["perceptual"]
    )


# --- pluggable feature extractors -------------------------------------------


class IdentityExtractor(nn.Module):
    """Feature map = the image itself; perceptual loss reduces to image MSE."""

    def forward(self, x):
        return x


class SeededConvExtractor(nn.Module):
    """Fixed-seed frozen 3-layer conv stack; a hermetic stand-in for
    pretrained deep features.  Deterministic: same input, same features."""

    def __init__(self, in_channels: int = 3, width: int = 16, seed: int = 0,
                 pooled: bool = False):
        super().__init__()
        gen = torch.Generator().manual_seed(seed)
        layers = []
        chans = [in_channels, width, width, width]
        for cin, cout in zip(chans[:-1], chans[1:]):
            conv = nn.Conv2d(cin, cout, 3, padding=1)
            with torch.no_grad():
                conv.weight.copy_(torch.randn(conv.weight.shape, generator=gen) * 0.2)
                conv.bias.zero_()
            layers += [conv, nn.SiLU()]
        self.net = nn.Sequential(*layers)
        self.pooled = pooled
        for p in self.parameters():
            p.requires_grad_(False)

    def forward(self, x):
        if x.ndim == 3:
            feats = self.net(x[None])[0]
            return feats.mean(dim=(-2, -1)) if self.pooled else feats
        feats = self.net(x)
        return feats.mean(dim=(-2, -1)) if self.pooled else feats


def build_extractor(kind: str, in_channels: int = 3, seed: int = 0) -> nn.Module:
    """Extractor registry keyed by config string."""
    if kind == "identity":
        return IdentityExtractor()
    if kind == "seeded-conv":
        return SeededConvExtractor(in_channels=in_channels, seed=seed)
    if kind == "seeded-conv-pooled":
        return SeededConvExtractor(in_channels=in_channels, seed=seed, pooled=True)
    raise ValueError(
        f"unknown perceptual extractor {kind!r}; pretrained backbones plug in "
        "by registering a module that maps images to feature maps"
    )
