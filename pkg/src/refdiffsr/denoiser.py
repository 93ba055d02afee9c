"""Residual/noise prediction networks.

Three topologies share the same U-Net building blocks:

* ``shared``        - one encoder/decoder, one head emitting both components
                      (first half of the channels is the residual, second the
                      noise);
* ``split-decoder`` - one shared encoder, separate residual and noise
                      decoders;
* ``dual``          - two fully independent networks, nothing shared.

Conditioning: the diffused state and the upsampled LR input are concatenated
on channels, the timestep enters through a sinusoidal embedding modulating
every block, and texture guidance maps are fused into decoder stages whose
spatial size matches the guidance scale.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .planes import ImagePlane, as_tensor

VARIANT_SHARED = "shared"
VARIANT_SPLIT = "split-decoder"
VARIANT_DUAL = "dual"
VARIANTS = (VARIANT_SHARED, VARIANT_SPLIT, VARIANT_DUAL)


@dataclass
class DenoiserConfig:
    variant: str = VARIANT_DUAL
    image_channels: int = 3
    base_channels: int = 16
    channel_multipliers: tuple[int, ...] = (1, 2, 2, 4)
    num_blocks: int = 1
    time_embed_dim: int = 64
    guidance_channels: tuple[int, int, int] = (16, 32, 64)

    def stage_widths(self) -> list[int]:
        return [self.base_channels * m for m in self.channel_multipliers]


class SinusoidalEmbedding(nn.Module):
    def __init__(self, dim: int):
        super().__init__()
        if dim % 2:
            raise ValueError("embedding dim must be even")
        self.dim = dim

    def forward(self, t: torch.Tensor) -> torch.Tensor:
        half = self.dim // 2
        freqs = torch.exp(
            -math.log(10000.0) * torch.arange(half, dtype=t.dtype) / max(half - 1, 1)
        )
        args = t[:, None].to(freqs) * freqs[None]
        return torch.cat([torch.sin(args), torch.cos(args)], dim=-1)


class ResBlock(nn.Module):
    """Two 3x3 convs with a timestep-conditioned affine between them."""

    def __init__(self, in_ch: int, out_ch: int, emb_dim: int):
        super().__init__()
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, padding=1)
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, padding=1)
        self.emb = nn.Linear(emb_dim, 2 * out_ch)
        self.skip = nn.Conv2d(in_ch, out_ch, 1) if in_ch != out_ch else nn.Identity()

    def forward(self, x, emb):
        h = self.conv1(F.silu(x))
        scale, shift = self.emb(F.silu(emb)).chunk(2, dim=-1)
        h = h * (1.0 + scale[:, :, None, None]) + shift[:, :, None, None]
        h = self.conv2(F.silu(h))
        return h + self.skip(x)


class Encoder(nn.Module):
    def __init__(self, cfg: DenoiserConfig, in_channels: int):
        super().__init__()
        widths = cfg.stage_widths()
        self.conv_in = nn.Conv2d(in_channels, widths[0], 3, padding=1)
        self.stages = nn.ModuleList()
        self.downs = nn.ModuleList()
        for i, w in enumerate(widths):
            blocks = nn.ModuleList(
                ResBlock(w, w, cfg.time_embed_dim) for _ in range(cfg.num_blocks)
            )
            self.stages.append(blocks)
            if i < len(widths) - 1:
                self.downs.append(nn.Conv2d(w, widths[i + 1], 3, stride=2, padding=1))

    def forward(self, x, emb):
        x = self.conv_in(x)
        skips = []
        for i, blocks in enumerate(self.stages):
            for b in blocks:
                x = b(x, emb)
            if i < len(self.downs):
                skips.append(x)
                x = self.downs[i](x)
        return x, skips


class Decoder(nn.Module):
    """Mirror of the encoder with skip concatenation and guidance fusion."""

    def __init__(self, cfg: DenoiserConfig, out_channels: int):
        super().__init__()
        widths = cfg.stage_widths()
        depth = len(widths)
        self.ups = nn.ModuleList()
        self.stages = nn.ModuleList()
        self.fuses = nn.ModuleList()
        self.guid_scales: list[int | None] = []
        for i in range(depth - 2, -1, -1):
            self.ups.append(nn.ConvTranspose2d(widths[i + 1], widths[i], 2, stride=2))
            blocks = nn.ModuleList(
                ResBlock(widths[i] * 2 if j == 0 else widths[i], widths[i], cfg.time_embed_dim)
                for j in range(cfg.num_blocks)
            )
            self.stages.append(blocks)
            # Decoder stage emitting 1/2^i of the input resolution takes the
            # guidance scale with the same spatial size (scale s covers 1/2^(s-1)).
            scale = i + 1
            if scale <= len(cfg.guidance_channels):
                self.fuses.append(
                    nn.Conv2d(widths[i] + cfg.guidance_channels[scale - 1], widths[i], 1)
                )
                self.guid_scales.append(scale)
            else:
                self.fuses.append(nn.Identity())
                self.guid_scales.append(None)
        self.head = nn.Conv2d(widths[0], out_channels, 3, padding=1)

    def forward(self, x, skips, emb, guidance):
        for i, (up, blocks) in enumerate(zip(self.ups, self.stages)):
            x = up(x)
            x = torch.cat([x, skips[-(i + 1)]], dim=1)
            for b in blocks:
                x = b(x, emb)
            scale = self.guid_scales[i]
            if scale is not None:
                g = guidance[scale - 1]
                if g.shape[-2:] != x.shape[-2:]:
                    raise ValueError(
                        f"guidance scale {scale} is {tuple(g.shape[-2:])}, "
                        f"decoder stage is {tuple(x.shape[-2:])}"
                    )
                x = self.fuses[i](torch.cat([x, g], dim=1))
        return self.head(x)


class _UNet(nn.Module):
    def __init__(self, cfg: DenoiserConfig, out_channels: int):
        super().__init__()
        self.embed = nn.Sequential(
            SinusoidalEmbedding(cfg.time_embed_dim),
            nn.Linear(cfg.time_embed_dim, cfg.time_embed_dim),
        )
        self.encoder = Encoder(cfg, 2 * cfg.image_channels)
        self.decoder = Decoder(cfg, out_channels)

    def forward(self, x, t, guidance):
        emb = self.embed(t)
        h, skips = self.encoder(x, emb)
        return self.decoder(h, skips, emb, guidance)


class Denoiser(nn.Module):
    """Variant-dispatching predictor for the residual and noise components."""

    def __init__(self, cfg: DenoiserConfig):
        super().__init__()
        if cfg.variant not in VARIANTS:
            raise ValueError(f"unknown denoiser variant {cfg.variant!r}; have {VARIANTS}")
        self.cfg = cfg
        c = cfg.image_channels
        if cfg.variant == VARIANT_SHARED:
            self.net = _UNet(cfg, 2 * c)
        elif cfg.variant == VARIANT_SPLIT:
            self.embed = nn.Sequential(
                SinusoidalEmbedding(cfg.time_embed_dim),
                nn.Linear(cfg.time_embed_dim, cfg.time_embed_dim),
            )
            self.encoder = Encoder(cfg, 2 * c)
            self.decoder_res = Decoder(cfg, c)
            self.decoder_eps = Decoder(cfg, c)
        else:
            self.net_res = _UNet(cfg, c)
            self.net_eps = _UNet(cfg, c)

    def forward(self, noised, lr_up, guidance, t):
        x_t = as_tensor(noised)
        x_in = as_tensor(lr_up)
        if x_t.shape != x_in.shape:
            raise ValueError(f"state/input shapes differ: {x_t.shape} vs {x_in.shape}")
        squeeze = x_t.ndim == 3
        if squeeze:
            x_t, x_in = x_t[None], x_in[None]
        batch = x_t.shape[0]
        if torch.is_tensor(t):
            tt = t.to(x_t.dtype).reshape(-1)
            if tt.numel() == 1:
                tt = tt.expand(batch)
        else:
            tt = torch.full((batch,), float(t), dtype=x_t.dtype)
        guid = self._guidance_tensors(guidance, x_t)
        x = torch.cat([x_t, x_in], dim=1)
        c = self.cfg.image_channels
        if self.cfg.variant == VARIANT_SHARED:
            out = self.net(x, tt, guid)
            res, eps = out[:, :c], out[:, c:]
        elif self.cfg.variant == VARIANT_SPLIT:
            emb = self.embed(tt)
            h, skips = self.encoder(x, emb)
            res = self.decoder_res(h, skips, emb, guid)
            eps = self.decoder_eps(h, skips, emb, guid)
        else:
            res = self.net_res(x, tt, guid)
            eps = self.net_eps(x, tt, guid)
        if squeeze:
            res, eps = res[0], eps[0]
        return eps, res

    def _guidance_tensors(self, guidance, x_t):
        batch, _, h, w = x_t.shape
        maps = list(guidance) if guidance is not None else [None, None, None]
        out = []
        for s, g in enumerate(maps[:3]):
            ch = self.cfg.guidance_channels[s]
            size = (h >> s, w >> s)
            if g is None:
                out.append(torch.zeros(batch, ch, *size, dtype=x_t.dtype))
                continue
            g = as_tensor(g)
            if g.ndim == 3:
                g = g[None].expand(batch, -1, -1, -1)
            if g.shape[1] != ch:
                raise ValueError(f"guidance scale {s + 1} has {g.shape[1]} channels, expected {ch}")
            out.append(g.to(x_t.dtype))
        return out


def build_denoiser(cfg: DenoiserConfig) -> Denoiser:
    return Denoiser(cfg)


def predict(
    den: Denoiser, noised, lr_up, guidance, t
) -> tuple[ImagePlane | torch.Tensor, ImagePlane | torch.Tensor]:
    """Run the predictor; returns (eps_pred, res_pred) shaped like the state."""
    t_lo = torch.as_tensor(t).min().item() if torch.is_tensor(t) else t
    t_hi = torch.as_tensor(t).max().item() if torch.is_tensor(t) else t
    if t_lo < 1:
        raise ValueError(f"timestep {t_lo} below 1")
    eps, res = den(noised, lr_up, guidance, t)
    if isinstance(noised, ImagePlane):
        return noised.with_data(eps, role="noise"), noised.with_data(res, role="residual")
    return eps, res


def param_count(module: nn.Module) -> int:
    """Total learnable scalar count."""
    return sum(p.numel() for p in module.parameters() if p.requires_grad)
