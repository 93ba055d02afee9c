"""Multi-scale feature extraction: parallel 3/5/7 depthwise banks with CBAM
gating, stacked into a three-scale pyramid shared by all conditioning branches.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
import torch.nn as nn

from .planes import as_tensor

KERNEL_SIZES = (3, 5, 7)


@dataclass
class BlockConfig:
    in_channels: int
    branch_channels: int | None = None  # defaults to ceil(C/2)
    cbam_reduction: int = 8
    spatial_kernel: int = 7

    def resolved_branch(self) -> int:
        if self.branch_channels is not None:
            return self.branch_channels
        return (self.in_channels + 1) // 2


@dataclass
class PyramidConfig:
    in_channels: int = 3
    widths: tuple[int, int, int] = (16, 32, 64)
    block_counts: tuple[int, int, int] = (2, 2, 2)
    cbam_reduction: int = 8
    spatial_kernel: int = 7

    def __post_init__(self):
        if len(self.widths) != 3 or len(self.block_counts) != 3:
            raise ValueError("pyramid is fixed at exactly 3 scales")


class ChannelLayerNorm(nn.Module):
    """LayerNorm over the channel axis at every spatial site."""

    def __init__(self, channels: int, eps: float = 1e-6):
        super().__init__()
        self.weight = nn.Parameter(torch.ones(channels))
        self.bias = nn.Parameter(torch.zeros(channels))
        self.eps = eps

    def forward(self, x):
        mu = x.mean(dim=1, keepdim=True)
        var = x.var(dim=1, keepdim=True, unbiased=False)
        x = (x - mu) / torch.sqrt(var + self.eps)
        return x * self.weight[:, None, None] + self.bias[:, None, None]


class ChannelAttention(nn.Module):
    def __init__(self, channels: int, reduction: int = 8):
        super().__init__()
        hidden = max(1, channels // reduction)
        self.mlp = nn.Sequential(
            nn.Conv2d(channels, hidden, 1, bias=False),
            nn.ReLU(),
            nn.Conv2d(hidden, channels, 1, bias=False),
        )

    def forward(self, x):
        avg = self.mlp(x.mean(dim=(-2, -1), keepdim=True))
        mx = self.mlp(x.amax(dim=(-2, -1), keepdim=True))
        return torch.sigmoid(avg + mx)


class SpatialAttention(nn.Module):
    def __init__(self, kernel: int = 7):
        super().__init__()
        self.conv = nn.Conv2d(2, 1, kernel, padding=kernel // 2, bias=False)

    def forward(self, x):
        avg = x.mean(dim=1, keepdim=True)
        mx = x.amax(dim=1, keepdim=True)
        return torch.sigmoid(self.conv(torch.cat([avg, mx], dim=1)))


class CBAM(nn.Module):
    """Sequential channel-then-spatial sigmoid gating; both gates lie in (0,1)
    so the block can only attenuate activations."""

    def __init__(self, channels: int, reduction: int = 8, spatial_kernel: int = 7):
        super().__init__()
        self.channel = ChannelAttention(channels, reduction)
        self.spatial = SpatialAttention(spatial_kernel)

    def forward(self, x):
        x = x * self.channel(x)
        return x * self.spatial(x)


def _depthwise_bank(channels: int) -> nn.ModuleList:
    return nn.ModuleList(
        nn.Conv2d(channels, channels, k, padding=k // 2, groups=channels)
        for k in KERNEL_SIZES
    )


class MultiScaleBlock(nn.Module):
    """Residual block mixing 3/5/7 depthwise branches with CBAM reweighting.

    Pipeline: channel LayerNorm -> 1x1 expand to 3*C' -> chunk into three C'
    groups -> first depthwise 3/5/7 bank (ReLU) -> concat -> second depthwise
    bank over the fused tensor (ReLU) -> concat -> CBAM -> 1x1 back to C ->
    residual add.
    """

    def __init__(self, cfg: BlockConfig):
        super().__init__()
        self.cfg = cfg
        c, cp = cfg.in_channels, cfg.resolved_branch()
        self.norm = ChannelLayerNorm(c)
        self.expand = nn.Conv2d(c, 3 * cp, 1)
        self.bank_a = _depthwise_bank(cp)
        self.bank_b = _depthwise_bank(3 * cp)
        self.cbam = CBAM(9 * cp, cfg.cbam_reduction, cfg.spatial_kernel)
        self.project = nn.Conv2d(9 * cp, c, 1)
        self.act = nn.ReLU()

    def forward(self, x):
        if x.shape[-3] != self.cfg.in_channels:
            raise ValueError(
                f"expected {self.cfg.in_channels} channels, got {x.shape[-3]}"
            )
        squeeze = x.ndim == 3
        if squeeze:
            x = x[None]
        chunks = self.expand(self.norm(x)).chunk(3, dim=1)
        shallow = torch.cat(
            [self.act(conv(c)) for conv, c in zip(self.bank_a, chunks)], dim=1
        )
        deep = torch.cat([self.act(conv(shallow)) for conv in self.bank_b], dim=1)
        out = x + self.project(self.cbam(deep))
        return out[0] if squeeze else out


@dataclass
class PyramidFeatures:
    """Three feature maps with spatial dims halving between scales."""

    scales: tuple[torch.Tensor, torch.Tensor, torch.Tensor] = field(default=None)

    def __post_init__(self):
        if len(self.scales) != 3:
            raise ValueError("pyramid emits exactly 3 scales")
        for a, b in zip(self.scales, self.scales[1:]):
            if a.shape[-2] != 2 * b.shape[-2] or a.shape[-1] != 2 * b.shape[-1]:
                raise ValueError("pyramid scales must halve spatially")

    def __iter__(self):
        return iter(self.scales)

    def __getitem__(self, i):
        return self.scales[i]


class FeaturePyramid(nn.Module):
    """Shared extractor producing features at full, half, and quarter size."""

    def __init__(self, cfg: PyramidConfig):
        super().__init__()
        self.cfg = cfg
        self.stem = nn.Conv2d(cfg.in_channels, cfg.widths[0], 3, padding=1)
        stages = []
        downs = []
        for s, (width, count) in enumerate(zip(cfg.widths, cfg.block_counts)):
            block_cfg = BlockConfig(
                in_channels=width,
                cbam_reduction=cfg.cbam_reduction,
                spatial_kernel=cfg.spatial_kernel,
            )
            stages.append(nn.Sequential(*[MultiScaleBlock(block_cfg) for _ in range(count)]))
            if s < 2:
                downs.append(nn.Conv2d(width, cfg.widths[s + 1], 3, stride=2, padding=1))
        self.stages = nn.ModuleList(stages)
        self.downs = nn.ModuleList(downs)

    def forward(self, img) -> PyramidFeatures:
        x = as_tensor(img)
        squeeze = x.ndim == 3
        if squeeze:
            x = x[None]
        h, w = x.shape[-2:]
        if h % 4 or w % 4:
            raise ValueError(f"spatial dims {h}x{w} must be divisible by 4")
        x = self.stem(x)
        outs = []
        for s, stage in enumerate(self.stages):
            x = stage(x)
            outs.append(x[0] if squeeze else x)
            if s < 2:
                x = self.downs[s](x)
        return PyramidFeatures(scales=tuple(outs))
