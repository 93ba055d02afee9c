"""Role-tagged image rasters shared by the diffusion operations."""

from __future__ import annotations

from dataclasses import dataclass, field

import torch

# Roles an image raster can play inside the dual diffusion pipeline.
ROLE_HR = "hr"                # clean target image
ROLE_LR_UP = "lr_up"          # bicubically upsampled low-resolution input
ROLE_RESIDUAL = "residual"    # lr_up - hr difference
ROLE_NOISED = "noised"        # partially diffused state
ROLE_NOISE = "noise"          # gaussian noise draw
ROLE_SR = "sr"                # super-resolved output / estimate

VALID_ROLES = frozenset(
    {ROLE_HR, ROLE_LR_UP, ROLE_RESIDUAL, ROLE_NOISED, ROLE_NOISE, ROLE_SR}
)


@dataclass
class ImagePlane:
    """A (C, H, W) float raster with a declared value range and pipeline role.

    A leading batch dimension is allowed; every operation in this package is
    elementwise over whatever dimensions are present, so batched planes behave
    exactly like a stack of unbatched ones.
    """

    data: torch.Tensor
    role: str = ROLE_HR
    value_range: tuple[float, float] = field(default=(0.0, 1.0))

    def __post_init__(self):
        if self.role not in VALID_ROLES:
            raise ValueError(f"unknown plane role {self.role!r}")
        if not torch.is_tensor(self.data):
            self.data = torch.as_tensor(self.data, dtype=torch.float32)
        if self.data.ndim < 3:
            raise ValueError(
                f"plane data must be at least (C, H, W), got shape {tuple(self.data.shape)}"
            )

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(self.data.shape)

    def with_data(self, data: torch.Tensor, role: str | None = None) -> "ImagePlane":
        """New plane carrying `data`, inheriting range (and role unless given)."""
        return ImagePlane(data, role if role is not None else self.role, self.value_range)

    def clamped(self) -> "ImagePlane":
        lo, hi = self.value_range
        return ImagePlane(self.data.clamp(lo, hi), self.role, self.value_range)


def as_tensor(x) -> torch.Tensor:
    """Accept an ImagePlane or a raw tensor and return the tensor."""
    return x.data if isinstance(x, ImagePlane) else x


def check_same_shape(*planes) -> None:
    shapes = [tuple(as_tensor(p).shape) for p in planes]
    if any(s != shapes[0] for s in shapes[1:]):
        raise ValueError(f"plane shapes differ: {shapes}")
