"""Dataset preparation: manifests, splits, reference pairing, image I/O."""

from __future__ import annotations

import hashlib
import random
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .planes import ImagePlane, ROLE_HR

SPLIT_TRAIN = "train"
SPLIT_REFERENCE = "reference"
SPLIT_VALIDATION = "validation"
SPLITS = (SPLIT_TRAIN, SPLIT_REFERENCE, SPLIT_VALIDATION)
SPLIT_WEIGHTS = (6, 3, 1)

NOISE_REF_TOKEN = "<noise>"

PAIR_SAME_CATEGORY = "same-category"
PAIR_RANDOM = "random"
PAIR_NOISE = "noise"
PAIR_POLICIES = (PAIR_SAME_CATEGORY, PAIR_RANDOM, PAIR_NOISE)


@dataclass(frozen=True)
class ManifestEntry:
    path: str
    category: str
    split: str


@dataclass
class DatasetManifest:
    entries: list[ManifestEntry]
    seed: int
    sr_factor: int = 4

    def split_entries(self, split: str) -> list[ManifestEntry]:
        if split not in SPLITS:
            raise ValueError(f"unknown split {split!r}")
        return [e for e in self.entries if e.split == split]

    def categories(self) -> list[str]:
        return sorted({e.category for e in self.entries})

    def save(self, path) -> None:
        lines = [f"# seed={self.seed} sr_factor={self.sr_factor}"]
        lines += [f"{e.path}\t{e.category}\t{e.split}" for e in self.entries]
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def load(cls, path) -> "DatasetManifest":
        text = Path(path).read_text().strip().splitlines()
        if not text or not text[0].startswith("#"):
            raise ValueError(f"{path}: missing manifest header line")
        header = dict(kv.split("=") for kv in text[0][1:].split())
        entries = []
        for line in text[1:]:
            if not line.strip():
                continue
            p, cat, split = line.split("\t")
            if split not in SPLITS:
                raise ValueError(f"{path}: bad split tag {split!r}")
            entries.append(ManifestEntry(p, cat, split))
        return cls(entries, seed=int(header["seed"]), sr_factor=int(header["sr_factor"]))


def _largest_remainder_counts(n: int) -> tuple[int, int, int]:
    total = sum(SPLIT_WEIGHTS)
    exact = [n * w / total for w in SPLIT_WEIGHTS]
    counts = [int(x) for x in exact]
    remainders = [x - c for x, c in zip(exact, counts)]
    for _ in range(n - sum(counts)):
        i = int(np.argmax(remainders))
        counts[i] += 1
        remainders[i] = -1.0
    return tuple(counts)


def split_dataset(items: list[tuple[str, str]], seed: int, sr_factor: int = 4) -> DatasetManifest:
    """Deterministic stratified 6:3:1 split of (path, category) pairs."""
    if not items:
        raise ValueError("no items to split")
    by_cat: dict[str, list[str]] = {}
    for path, cat in items:
        by_cat.setdefault(cat, []).append(path)
    entries = []
    for cat in sorted(by_cat):
        paths = sorted(by_cat[cat])
        if not paths:
            raise ValueError(f"empty category {cat!r}")
        rng = random.Random(f"{seed}:{cat}")
        rng.shuffle(paths)
        n_train, n_ref, _ = _largest_remainder_counts(len(paths))
        for i, p in enumerate(paths):
            if i < n_train:
                split = SPLIT_TRAIN
            elif i < n_train + n_ref:
                split = SPLIT_REFERENCE
            else:
                split = SPLIT_VALIDATION
            entries.append(ManifestEntry(p, cat, split))
    return DatasetManifest(entries, seed=seed, sr_factor=sr_factor)


def _item_rng(seed: int, key: str) -> random.Random:
    digest = hashlib.sha256(f"{seed}:{key}".encode()).hexdigest()
    return random.Random(int(digest[:16], 16))


def pair_reference(
    item: ManifestEntry,
    manifest: DatasetManifest,
    policy: str,
    seed: int,
) -> str:
    """Reference path for a manifest entry; deterministic per (seed, item)."""
    if policy not in PAIR_POLICIES:
        raise ValueError(f"unknown pairing policy {policy!r}")
    if policy == PAIR_NOISE:
        return NOISE_REF_TOKEN
    refs = manifest.split_entries(SPLIT_REFERENCE)
    if policy == PAIR_SAME_CATEGORY:
        refs = [r for r in refs if r.category == item.category]
        if not refs:
            raise ValueError(f"no reference images in category {item.category!r}")
    elif not refs:
        raise ValueError("reference split is empty")
    rng = _item_rng(seed, item.path)
    return rng.choice(refs).path


def noise_reference(shape: tuple[int, int, int], seed: int) -> ImagePlane:
    """Synthetic standard-normal reference image."""
    gen = torch.Generator().manual_seed(seed)
    data = torch.randn(shape, generator=gen)
    return ImagePlane(data, role=ROLE_HR, value_range=(0.0, 1.0))


def load_image(path) -> ImagePlane:
    """Read an 8-bit PNG/JPEG into a normalized (C, H, W) float plane."""
    with Image.open(path) as im:
        im = im.convert("RGB") if im.mode not in ("L", "RGB") else im.copy()
    arr = np.asarray(im, dtype=np.float32) / 255.0
    if arr.ndim == 2:
        arr = arr[None]
    else:
        arr = arr.transpose(2, 0, 1)
    return ImagePlane(torch.from_numpy(arr.copy()), role=ROLE_HR)


def save_image(plane: ImagePlane, path) -> None:
    """Write a [0,1] plane as 8-bit PNG with round-half-even quantization."""
    data = plane.data.detach().cpu().clamp(0.0, 1.0).numpy()
    scaled = np.asarray(data, dtype=np.float64) * 255.0
    quantized = np.rint(scaled).astype(np.uint8)  # numpy rint rounds half to even
    if quantized.shape[0] == 1:
        Image.fromarray(quantized[0], mode="L").save(path)
    else:
        Image.fromarray(quantized.transpose(1, 2, 0), mode="RGB").save(path)


def crop_quarters(img: ImagePlane, size: int, seed: int, key: str = "") -> ImagePlane:
    """Pick one of the four size x size corner crops, seeded per item."""
    data = img.data
    h, w = data.shape[-2:]
    if h < size or w < size:
        raise ValueError(f"image {h}x{w} smaller than crop {size}")
    corners = [(0, 0), (0, w - size), (h - size, 0), (h - size, w - size)]
    top, left = corners[_item_rng(seed, key).randrange(4)]
    return img.with_data(data[..., top : top + size, left : left + size])


# --- synthetic toy imagery -------------------------------------------------

_TOY_STYLES = ("stripes", "checks", "blobs")


def make_toy_image(size: int, category: str, seed: int, channels: int = 3) -> ImagePlane:
    """Structured synthetic image with texture family chosen by category.

    Sharp, high-frequency content guarantees plain bicubic upsampling leaves
    headroom for a learned model to beat.
    """
    rng = np.random.default_rng(seed)
    yy, xx = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
    img = np.zeros((channels, size, size), dtype=np.float32)
    base = rng.uniform(0.2, 0.8, size=channels)
    tilt = rng.uniform(-0.3, 0.3, size=(channels, 2))
    for c in range(channels):
        img[c] = base[c] + tilt[c, 0] * xx / size + tilt[c, 1] * yy / size
    style = category if category in _TOY_STYLES else _TOY_STYLES[seed % len(_TOY_STYLES)]
    if style == "stripes":
        period = rng.integers(3, 7)
        angle = rng.uniform(0, np.pi)
        phase = (np.cos(angle) * xx + np.sin(angle) * yy) / period
        img += 0.25 * np.sign(np.sin(2 * np.pi * phase))[None]
    elif style == "checks":
        cell = int(rng.integers(2, 5))
        img += 0.25 * ((xx // cell + yy // cell) % 2 * 2.0 - 1.0)[None]
    else:
        for _ in range(6):
            cy, cx = rng.uniform(0, size, 2)
            r = rng.uniform(size * 0.05, size * 0.2)
            mask = ((yy - cy) ** 2 + (xx - cx) ** 2) < r**2
            img += rng.uniform(-0.35, 0.35) * mask[None]
    for _ in range(4):
        top, left = rng.integers(0, size - 4, 2)
        hh, ww = rng.integers(3, max(4, size // 4), 2)
        img[:, top : top + hh, left : left + ww] += rng.uniform(-0.3, 0.3)
    img = np.clip(img, 0.0, 1.0)
    return ImagePlane(torch.from_numpy(img), role=ROLE_HR)


def make_toy_dataset(
    out_dir,
    per_category: dict[str, int],
    size: int = 64,
    seed: int = 0,
    channels: int = 3,
) -> list[tuple[str, str]]:
    """Write seeded toy PNGs grouped by category; returns (path, category) pairs."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    items = []
    idx = 0
    for cat in sorted(per_category):
        for i in range(per_category[cat]):
            plane = make_toy_image(size, cat, seed=seed * 10_000 + idx, channels=channels)
            path = out_dir / f"{cat}_{i:03d}.png"
            save_image(plane, path)
            items.append((str(path), cat))
            idx += 1
    return items
