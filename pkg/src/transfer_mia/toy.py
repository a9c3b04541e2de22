"""Procedurally generated desk-scale image corpora.

Three tasks with disjoint label spaces: ``glyphs`` (teacher task: stroke
patterns), ``gratings`` (oriented textures) and ``blobs`` (colored spot
layouts). Every sample is a class prototype under heavy nuisance variation
(shift, tint, clutter, pixel noise), so small CNNs memorize their training
partition well before they generalize.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .data import LabeledDataset, save_packed

SIZE = 16
CORPORA = ("glyphs", "gratings", "blobs")


def _segment_mask(rng, size, n_segments):
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float32)
    mask = np.zeros((size, size), np.float32)
    for _ in range(n_segments):
        (y0, x0), (y1, x1) = rng.uniform(2, size - 3, size=(2, 2))
        dy, dx = y1 - y0, x1 - x0
        t = np.clip(((yy - y0) * dy + (xx - x0) * dx) / (dy * dy + dx * dx + 1e-6), 0, 1)
        dist = np.hypot(yy - (y0 + t * dy), xx - (x0 + t * dx))
        mask = np.maximum(mask, np.clip(1.5 - dist, 0, 1))
    return mask


def _finish(rng, mask_or_rgb, noise):
    img = mask_or_rgb
    if img.ndim == 2:
        color = rng.uniform(0.5, 1.0, size=3)
        img = img[..., None] * color
    background = rng.uniform(0.0, 0.35, size=3)
    img = np.clip(img + background + rng.normal(0, noise, img.shape), 0, 1)
    return (img * 255).round().astype(np.uint8)


def _glyphs(n, rng, num_classes=10):
    protos = [_segment_mask(np.random.default_rng(1000 + c), SIZE, 3) for c in range(num_classes)]
    labels = rng.integers(0, num_classes, size=n)
    out = np.empty((n, SIZE, SIZE, 3), np.uint8)
    for i, c in enumerate(labels):
        m = np.roll(protos[c], rng.integers(-2, 3, size=2), axis=(0, 1))
        m = np.maximum(m * rng.uniform(0.6, 1.0), 0.8 * _segment_mask(rng, SIZE, 1))
        out[i] = _finish(rng, m, 0.18)
    return out, labels


def _gratings(n, rng, num_classes=8):
    yy, xx = np.mgrid[0:SIZE, 0:SIZE].astype(np.float32)
    angles = np.arange(num_classes // 2) * np.pi / (num_classes // 2)
    freqs = (0.35, 0.8)
    labels = rng.integers(0, num_classes, size=n)
    out = np.empty((n, SIZE, SIZE, 3), np.uint8)
    for i, c in enumerate(labels):
        angle = angles[c % len(angles)] + rng.normal(0, 0.15)
        freq = freqs[c // len(angles)] * rng.uniform(0.85, 1.15)
        wave = np.sin(freq * (xx * np.cos(angle) + yy * np.sin(angle)) + rng.uniform(0, 2 * np.pi))
        m = 0.5 * (wave + 1) * rng.uniform(0.5, 0.9)
        out[i] = _finish(rng, m, 0.22)
    return out, labels


def _blobs(n, rng, num_classes=6):
    yy, xx = np.mgrid[0:SIZE, 0:SIZE].astype(np.float32)
    palette = np.array([[1.0, 0.2, 0.2], [0.2, 0.9, 0.3]], np.float32)
    labels = rng.integers(0, num_classes, size=n)
    out = np.empty((n, SIZE, SIZE, 3), np.uint8)
    for i, c in enumerate(labels):
        count, hue = c % 3 + 1, c // 3
        img = np.zeros((SIZE, SIZE, 3), np.float32)
        for _ in range(count):
            cy, cx = rng.uniform(3, SIZE - 4, size=2)
            spot = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * rng.uniform(1.2, 2.2) ** 2))
            img = np.maximum(img, spot[..., None] * palette[hue] * rng.uniform(0.6, 1.0))
        # distractor spot in a random color
        cy, cx = rng.uniform(3, SIZE - 4, size=2)
        spot = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / 3.0)
        img = np.maximum(img, spot[..., None] * rng.uniform(0.2, 0.7, size=3))
        out[i] = _finish(rng, img, 0.2)
    return out, labels


_MAKERS = {"glyphs": (_glyphs, 10), "gratings": (_gratings, 8), "blobs": (_blobs, 6)}


def make_corpus(name: str, n: int, seed: int = 0) -> tuple[np.ndarray, np.ndarray, int]:
    """Return (uint8 images N x 16 x 16 x 3, labels, num_classes)."""
    try:
        maker, num_classes = _MAKERS[name]
    except KeyError:
        raise ValueError(f"unknown toy corpus {name!r}; choose from {CORPORA}") from None
    images, labels = maker(n, np.random.default_rng(seed), num_classes)
    return images, labels, num_classes


def toy_dataset(name: str, n: int, seed: int = 0) -> LabeledDataset:
    images, labels, num_classes = make_corpus(name, n, seed)
    ids = tuple(f"{name}-{i:06d}" for i in range(n))
    return LabeledDataset(images.astype(np.float32) / 255.0, labels, ids, num_classes, name)


def bundled_path(name: str) -> Path:
    return Path(__file__).parent / "corpora" / f"{name}.npz"


def write_bundled(sizes: dict[str, int] | None = None, seed: int = 0, directory: Path | None = None) -> list[Path]:
    """Regenerate the packed corpora shipped with the package."""
    sizes = sizes or {"glyphs": 800, "gratings": 600, "blobs": 600}
    directory = directory or bundled_path("x").parent
    directory.mkdir(parents=True, exist_ok=True)
    written = []
    for offset, (name, n) in enumerate(sorted(sizes.items())):
        images, labels, num_classes = make_corpus(name, n, seed + offset)
        path = directory / f"{name}.npz"
        save_packed((images, labels), path, num_classes=num_classes, name=name)
        written.append(path)
    return written
