"""Sparse texture transfer: match upsampled-LR patches against degraded
reference patches and transfer the best-correlated clean reference patches
as per-scale guidance maps.

Matching uses a soft correlation (local cosine similarity blended with a
context-pooled global similarity by a learnable coefficient) and a hard
selection (dynamic top-K, discrete forward / continuous backward).
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .planes import as_tensor
from .pyramid import FeaturePyramid

_EPS = 1e-12


@dataclass
class TextureConfig:
    patch_size: int = 3
    stride: int = 1
    k_max: int = 10
    temperature: float = 1.0
    use_topk: bool = True
    # Reference images may live on a grid `ref_scale` times finer than the
    # upsampled-LR grid (1 = same grid).
    ref_scale: int = 1


@dataclass
class PatchGeometry:
    """Unfold/fold geometry of one feature grid."""

    height: int
    width: int
    channels: int
    patch: int
    stride: int

    @property
    def rows(self) -> int:
        ph = (self.height - self.patch) // self.stride + 1
        pw = (self.width - self.patch) // self.stride + 1
        return ph * pw


@dataclass
class PatchEmbedding:
    """Vectorized patches for one scale: queries from LR-up features, keys
    from degraded-reference features, values from clean-reference features."""

    q: torch.Tensor  # (rows_q, patch^2 * C)
    k: torch.Tensor  # (rows_ref, patch^2 * C)
    v: torch.Tensor  # (rows_ref, patch^2 * C)
    q_geometry: PatchGeometry


@dataclass
class CorrelationSet:
    r_local: torch.Tensor
    r_global: torch.Tensor
    r_mix: torch.Tensor
    alpha: torch.Tensor


@dataclass
class SparseSelection:
    r_sparse: torch.Tensor    # (rows_q, rows_ref), exactly k nonzeros per row
    index_map: torch.Tensor   # (rows_q, k) kept column indices, ascending
    k: int                    # discrete forward selection size
    k_value: torch.Tensor     # straight-through scalar (forward k, soft grad)
    probs: torch.Tensor       # selection distribution over {1..k_max}


@dataclass
class TextureGuidance:
    maps: tuple[torch.Tensor, torch.Tensor, torch.Tensor]
    selections: tuple | None = None

    def __iter__(self):
        return iter(self.maps)


def unfold_patches(feat: torch.Tensor, patch: int, stride: int) -> torch.Tensor:
    """Valid (unpadded) patches of a (C, H, W) map as rows of length patch^2*C."""
    cols = F.unfold(feat[None], kernel_size=patch, stride=stride)
    return cols[0].transpose(0, 1)


def fold_patches(rows: torch.Tensor, geom: PatchGeometry) -> torch.Tensor:
    """Overlap-averaged inverse of unfold_patches onto geom's grid."""
    if rows.shape[0] != geom.rows:
        raise ValueError(f"{rows.shape[0]} rows do not tile a {geom.height}x{geom.width} grid")
    cols = rows.transpose(0, 1)[None]
    out = F.fold(cols, (geom.height, geom.width), kernel_size=geom.patch, stride=geom.stride)
    counts = F.fold(
        torch.ones_like(cols), (geom.height, geom.width),
        kernel_size=geom.patch, stride=geom.stride,
    )
    return (out / counts.clamp(min=1.0))[0]


def _row_normalize(x: torch.Tensor) -> torch.Tensor:
    # Zero-norm rows stay zero so flat patches correlate with nothing.
    norms = x.norm(dim=1, keepdim=True)
    return x / norms.clamp(min=_EPS)


def embed_qkv(
    lr_up,
    ref_downup,
    ref,
    pyramid: FeaturePyramid,
    cfg: TextureConfig,
) -> list[PatchEmbedding]:
    """Per-scale (Q, K, V) patch matrices from the shared feature pyramid."""
    t_lr, t_kd, t_v = as_tensor(lr_up), as_tensor(ref_downup), as_tensor(ref)
    if t_kd.shape[-2:] != t_v.shape[-2:]:
        raise ValueError("reference and degraded reference must share a grid")
    expect = (t_lr.shape[-2] * cfg.ref_scale, t_lr.shape[-1] * cfg.ref_scale)
    if t_v.shape[-2:] != expect:
        raise ValueError(
            f"reference resolution {tuple(t_v.shape[-2:])} is not {cfg.ref_scale}x "
            f"the LR-up resolution {tuple(t_lr.shape[-2:])}"
        )
    if t_lr.shape == t_kd.shape:
        # One batched pyramid pass over all branches that share a grid.
        stacked = pyramid(torch.stack([t_lr, t_kd, t_v]))
        scales_q = [f[0] for f in stacked]
        scales_k = [f[1] for f in stacked]
        scales_v = [f[2] for f in stacked]
    else:
        scales_q = list(pyramid(t_lr))
        stacked = pyramid(torch.stack([t_kd, t_v]))
        scales_k = [f[0] for f in stacked]
        scales_v = [f[1] for f in stacked]
    embeddings = []
    for fq, fk, fv in zip(scales_q, scales_k, scales_v):
        geom = PatchGeometry(
            height=fq.shape[-2], width=fq.shape[-1], channels=fq.shape[-3],
            patch=cfg.patch_size, stride=cfg.stride,
        )
        embeddings.append(
            PatchEmbedding(
                q=unfold_patches(fq, cfg.patch_size, cfg.stride),
                k=unfold_patches(fk, cfg.patch_size, cfg.stride),
                v=unfold_patches(fv, cfg.patch_size, cfg.stride),
                q_geometry=geom,
            )
        )
    return embeddings


def correlation(emb: PatchEmbedding, alpha) -> CorrelationSet:
    """Local and context-pooled cosine similarity, blended by alpha in [0,1]."""
    alpha = torch.as_tensor(alpha, dtype=emb.q.dtype)
    r_local = (_row_normalize(emb.q) @ _row_normalize(emb.k).T).clamp(-1.0, 1.0)
    # Global descriptors: every patch vector shifted by its image's mean patch.
    q_ctx = emb.q + emb.q.mean(dim=0, keepdim=True)
    k_ctx = emb.k + emb.k.mean(dim=0, keepdim=True)
    r_global = (_row_normalize(q_ctx) @ _row_normalize(k_ctx).T).clamp(-1.0, 1.0)
    r_mix = alpha * r_global + (1.0 - alpha) * r_local
    return CorrelationSet(r_local=r_local, r_global=r_global, r_mix=r_mix, alpha=alpha)


def _topk_mask(r: torch.Tensor, k: int) -> torch.Tensor:
    """Boolean mask of each row's k largest entries, ties to the lowest index."""
    n = r.shape[1]
    k = min(k, n)
    kth = torch.topk(r, k, dim=1).values[:, -1:]
    greater = r > kth
    equal = r == kth
    budget = k - greater.sum(dim=1, keepdim=True)
    take_equal = equal & (torch.cumsum(equal.to(torch.int64), dim=1) <= budget)
    return greater | take_equal


def sample_gumbel(shape, generator=None, dtype=torch.float32) -> torch.Tensor:
    u = torch.rand(shape, generator=generator, dtype=dtype)
    return -torch.log(-torch.log(u + 1e-20) + 1e-20)


def dynamic_topk(
    r_mix: torch.Tensor,
    w_k: torch.Tensor,
    k_max: int,
    temperature: float = 1.0,
    train_mode: bool = True,
    gumbel_noise: torch.Tensor | None = None,
    generator=None,
) -> SparseSelection:
    """Row-sparsify r_mix to a learned selection size K.

    Forward: K = argmax of the (Gumbel-perturbed) selection distribution,
    mapped to {1..k_max}; each row keeps its K largest entries.  Backward:
    the K scalar carries the gradient of sum_k P_k * k (straight-through).
    Evaluation mode disables the Gumbel perturbation.
    """
    if k_max < 1:
        raise ValueError("k_max must be >= 1")
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    if w_k.shape != (k_max,):
        raise ValueError(f"selection logits must have shape ({k_max},), got {tuple(w_k.shape)}")
    if train_mode:
        if gumbel_noise is None:
            gumbel_noise = sample_gumbel(w_k.shape, generator=generator, dtype=w_k.dtype)
        probs = torch.softmax((w_k + gumbel_noise) / temperature, dim=-1)
    else:
        probs = torch.softmax(w_k, dim=-1)
    k_hard = int(torch.argmax(probs).item()) + 1
    sizes = torch.arange(1, k_max + 1, dtype=probs.dtype)
    k_soft = (probs * sizes).sum()
    k_value = k_soft + (float(k_hard) - k_soft).detach()

    mask = _topk_mask(r_mix.detach(), k_hard)
    index_map = mask.nonzero(as_tuple=False)[:, 1].reshape(r_mix.shape[0], -1)
    r_sparse = r_mix * mask
    return SparseSelection(
        r_sparse=r_sparse, index_map=index_map, k=k_hard, k_value=k_value, probs=probs
    )


def transfer(sel: SparseSelection, v: torch.Tensor, geom: PatchGeometry) -> torch.Tensor:
    """Weighted gather of selected reference patches, folded onto the query grid."""
    if v.shape[0] != sel.r_sparse.shape[1]:
        raise ValueError(
            f"value rows {v.shape[0]} do not match selection columns {sel.r_sparse.shape[1]}"
        )
    weights = torch.gather(sel.r_sparse, 1, sel.index_map)   # (rows_q, k)
    gathered = v[sel.index_map]                              # (rows_q, k, d)
    mixed = (weights.unsqueeze(-1) * gathered).sum(dim=1)
    return fold_patches(mixed, geom)


def transfer_dense(r_mix: torch.Tensor, v: torch.Tensor, geom: PatchGeometry) -> torch.Tensor:
    """Ablation path without top-K: softmax-weighted transfer of all patches."""
    weights = torch.softmax(r_mix, dim=1)
    return fold_patches(weights @ v, geom)


class TextureMatcher(nn.Module):
    """Learnable texture-transfer head over a shared feature pyramid.

    Holds one blend coefficient and one selection-logit vector per scale.
    The guidance maps are scaled by k/k.detach() (identity forward) so the
    selection logits receive gradient through the straight-through K.
    """

    def __init__(self, cfg: TextureConfig, pyramid: FeaturePyramid):
        super().__init__()
        self.cfg = cfg
        self.pyramid = pyramid
        self.alpha_raw = nn.Parameter(torch.zeros(3))
        self.w_k = nn.Parameter(torch.zeros(3, cfg.k_max))

    def alphas(self) -> torch.Tensor:
        return torch.sigmoid(self.alpha_raw)

    def forward(self, lr_up, ref_downup, ref, generator=None) -> TextureGuidance:
        embeddings = embed_qkv(lr_up, ref_downup, ref, self.pyramid, self.cfg)
        alphas = self.alphas()
        maps = []
        selections = []
        for s, emb in enumerate(embeddings):
            corr = correlation(emb, alphas[s])
            if self.cfg.use_topk:
                sel = dynamic_topk(
                    corr.r_mix,
                    self.w_k[s],
                    self.cfg.k_max,
                    temperature=self.cfg.temperature,
                    train_mode=self.training,
                    generator=generator,
                )
                guid = transfer(sel, emb.v, emb.q_geometry)
                guid = guid * (sel.k_value / sel.k_value.detach())
                selections.append(sel)
            else:
                guid = transfer_dense(corr.r_mix, emb.v, emb.q_geometry)
                selections.append(None)
            maps.append(guid)
        return TextureGuidance(maps=tuple(maps), selections=tuple(selections))
