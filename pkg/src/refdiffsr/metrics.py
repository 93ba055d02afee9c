"""Image quality metrics: PSNR, SSIM, and Fréchet feature-distribution distance.

Conventions (documented so numbers are comparable across runs): PSNR is
computed jointly over all channels with a 100 dB cap at zero error; SSIM is
computed on luminance (ITU-R 601 weights) with an 11x11 Gaussian window of
sigma 1.5 and the standard stabilizers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import convolve2d

from .planes import ImagePlane, as_tensor

PSNR_CAP_DB = 100.0

_LUMA = np.array([0.299, 0.587, 0.114])


def _to_array(x) -> np.ndarray:
    t = as_tensor(x)
    return t.detach().cpu().numpy().astype(np.float64)


def psnr(a: ImagePlane, b: ImagePlane, peak: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB over all channels jointly."""
    xa, xb = _to_array(a), _to_array(b)
    if xa.shape != xb.shape:
        raise ValueError(f"shape mismatch: {xa.shape} vs {xb.shape}")
    mse = float(np.mean((xa - xb) ** 2))
    if mse == 0.0:
        return PSNR_CAP_DB
    return min(10.0 * np.log10(peak**2 / mse), PSNR_CAP_DB)


def _gaussian_window(size: int, sigma: float) -> np.ndarray:
    half = (size - 1) / 2.0
    coords = np.arange(size) - half
    g = np.exp(-(coords**2) / (2.0 * sigma**2))
    win = np.outer(g, g)
    return win / win.sum()


def _luminance(arr: np.ndarray) -> np.ndarray:
    if arr.ndim == 2:
        return arr
    if arr.shape[0] == 1:
        return arr[0]
    if arr.shape[0] == 3:
        return np.tensordot(_LUMA, arr, axes=1)
    raise ValueError(f"expected 1 or 3 channels, got {arr.shape[0]}")


def ssim(
    a: ImagePlane,
    b: ImagePlane,
    window: int = 11,
    sigma: float = 1.5,
    peak: float = 1.0,
    k1: float = 0.01,
    k2: float = 0.03,
) -> float:
    """Mean local structural similarity on luminance; result in [-1, 1]."""
    xa, xb = _luminance(_to_array(a)), _luminance(_to_array(b))
    if xa.shape != xb.shape:
        raise ValueError(f"shape mismatch: {xa.shape} vs {xb.shape}")
    if min(xa.shape) < window:
        raise ValueError(f"image {xa.shape} smaller than {window}x{window} window")
    win = _gaussian_window(window, sigma)
    c1 = (k1 * peak) ** 2
    c2 = (k2 * peak) ** 2

    def filt(x):
        return convolve2d(x, win, mode="valid")

    mu_a = filt(xa)
    mu_b = filt(xb)
    var_a = filt(xa * xa) - mu_a**2
    var_b = filt(xb * xb) - mu_b**2
    cov = filt(xa * xb) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


@dataclass(frozen=True)
class GaussianStats:
    """Feature-distribution moments used by the Fréchet distance."""

    mu: np.ndarray
    sigma: np.ndarray
    n: int

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=np.float64)
        sig = np.asarray(self.sigma, dtype=np.float64)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma", sig)
        if sig.shape != (mu.size, mu.size):
            raise ValueError("covariance shape does not match mean")
        asym = np.max(np.abs(sig - sig.T)) if sig.size else 0.0
        if asym > 1e-8:
            raise ValueError(f"covariance asymmetric by {asym:.2e}")


def _psd_sqrt(mat: np.ndarray, tol: float = 1e-8) -> np.ndarray:
    vals, vecs = np.linalg.eigh((mat + mat.T) / 2.0)
    if vals.min() < -tol * max(1.0, abs(vals.max())):
        raise ValueError(f"matrix not PSD within tolerance (min eigenvalue {vals.min():.2e})")
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.T


def frechet_distance(s1: GaussianStats, s2: GaussianStats) -> float:
    """||mu1-mu2||^2 + Tr(S1 + S2 - 2 (S1 S2)^{1/2}), clamped at zero.

    The cross-term square root is evaluated as sqrt(S1)^T S2 sqrt(S1) via a
    symmetric eigendecomposition, which stays stable for near-singular
    covariances.
    """
    if s1.mu.shape != s2.mu.shape:
        raise ValueError("feature dimensions differ")
    root1 = _psd_sqrt(s1.sigma)
    inner = root1 @ s2.sigma @ root1
    cross = _psd_sqrt(inner)
    dist = float(
        np.sum((s1.mu - s2.mu) ** 2)
        + np.trace(s1.sigma)
        + np.trace(s2.sigma)
        - 2.0 * np.trace(cross)
    )
    return max(dist, 0.0)


def feature_stats(images, extractor) -> GaussianStats:
    """Mean and unbiased covariance of flattened extractor features."""
    feats = []
    for img in images:
        out = extractor(as_tensor(img))
        feats.append(out.detach().cpu().numpy().astype(np.float64).ravel())
    if len(feats) < 2:
        raise ValueError("need at least 2 images for feature statistics")
    mat = np.stack(feats)
    mu = mat.mean(axis=0)
    sigma = np.cov(mat, rowvar=False)
    sigma = np.atleast_2d(sigma)
    return GaussianStats(mu=mu, sigma=sigma, n=len(feats))
