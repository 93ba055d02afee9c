"""Separable bicubic resampling used for degradation and reference prep.

Kernel convention: Catmull-Rom (a = -0.5), symmetric-reflect padding at the
borders, pixel-center coordinate mapping.  Downsampling stretches the kernel
by the scale factor (antialiasing); weights are renormalized per output
sample so constant images are preserved exactly at any factor.
"""

from __future__ import annotations

import numpy as np
import torch

from .planes import ImagePlane, as_tensor

_A = -0.5


def _cubic_kernel(x: np.ndarray) -> np.ndarray:
    ax = np.abs(x)
    ax2 = ax * ax
    ax3 = ax2 * ax
    near = (_A + 2.0) * ax3 - (_A + 3.0) * ax2 + 1.0
    far = _A * ax3 - 5.0 * _A * ax2 + 8.0 * _A * ax - 4.0 * _A
    out = np.where(ax <= 1.0, near, np.where(ax < 2.0, far, 0.0))
    return out


def _reflect_index(idx: np.ndarray, n: int) -> np.ndarray:
    # Symmetric reflection (edge pixel included): ... c b a | a b c ...
    if n == 1:
        return np.zeros_like(idx)
    period = 2 * n
    idx = np.mod(idx, period)
    idx = np.where(idx < 0, idx + period, idx)
    return np.where(idx >= n, period - 1 - idx, idx)


def _resample_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Dense (n_out, n_in) weight matrix for one axis."""
    scale = n_in / n_out
    stretch = max(scale, 1.0)  # kernel widening only when shrinking
    radius = 2.0 * stretch
    weights = np.zeros((n_out, n_in), dtype=np.float64)
    for i in range(n_out):
        center = (i + 0.5) * scale - 0.5
        lo = int(np.ceil(center - radius))
        hi = int(np.floor(center + radius))
        taps = np.arange(lo, hi + 1)
        w = _cubic_kernel((taps - center) / stretch)
        w_sum = w.sum()
        if w_sum <= 0:
            raise RuntimeError("degenerate resampling weights")
        w /= w_sum
        cols = _reflect_index(taps, n_in)
        np.add.at(weights[i], cols, w)
    return weights


def _resample_2d(data: torch.Tensor, out_h: int, out_w: int) -> torch.Tensor:
    arr = data.detach().cpu().numpy().astype(np.float64)
    lead = arr.shape[:-2]
    h, w = arr.shape[-2:]
    flat = arr.reshape(-1, h, w)
    if out_h != h:
        m_h = _resample_matrix(h, out_h)
        flat = np.einsum("oh,bhw->bow", m_h, flat)
    if out_w != w:
        m_w = _resample_matrix(w, out_w)
        flat = np.einsum("ow,bhw->bho", m_w, flat)
    out = flat.reshape(*lead, out_h, out_w)
    return torch.as_tensor(out, dtype=data.dtype)


def degrade_bicubic(img: ImagePlane, factor: int) -> ImagePlane:
    """Bicubic downsample by an integer factor (antialiased)."""
    if factor < 1:
        raise ValueError("factor must be >= 1")
    data = as_tensor(img)
    h, w = data.shape[-2:]
    if h % factor or w % factor:
        raise ValueError(f"dims {h}x{w} not divisible by factor {factor}")
    return img.with_data(_resample_2d(data, h // factor, w // factor))


def upsample_bicubic(img: ImagePlane, factor: int) -> ImagePlane:
    """Bicubic upsample by an integer factor."""
    if factor < 1:
        raise ValueError("factor must be >= 1")
    data = as_tensor(img)
    h, w = data.shape[-2:]
    return img.with_data(_resample_2d(data, h * factor, w * factor))


def make_ref_pair(ref: ImagePlane, factor: int) -> ImagePlane:
    """Frequency-matched reference: downsample then upsample back to size."""
    return upsample_bicubic(degrade_bicubic(ref, factor), factor)
