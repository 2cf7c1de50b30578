"""Procedurally generated shape images with exact foreground masks.

Each image holds one to three filled rectangles, ellipses or triangles over
a flat or linear-gradient background. Shapes carry a two-tone stripe texture
so they are not trivially flat. The union of the shapes is the foreground.
"""

from dataclasses import dataclass

import numpy as np

SHAPE_KINDS = ("rectangle", "ellipse", "triangle")


@dataclass
class ShapeCorpus:
    images: np.ndarray  # (M, H, W, 3) float64 in [0, 1]
    masks: np.ndarray   # (M, H, W) bool foreground
    seed: int

    def __len__(self) -> int:
        return len(self.images)


def _background(rng, size: int) -> np.ndarray:
    base = rng.uniform(0.0, 1.0, size=3)
    if rng.random() < 0.5:
        return np.broadcast_to(base, (size, size, 3)).copy()
    other = rng.uniform(0.0, 1.0, size=3)
    angle = rng.uniform(0.0, 2.0 * np.pi)
    ys, xs = np.mgrid[0:size, 0:size] / max(size - 1, 1)
    t = (np.cos(angle) * xs + np.sin(angle) * ys)
    t = (t - t.min()) / max(t.max() - t.min(), 1e-12)
    return base * (1.0 - t[..., None]) + other * t[..., None]


def _shape_mask(rng, kind: str, size: int) -> np.ndarray:
    ys, xs = np.mgrid[0:size, 0:size].astype(np.float64)
    cx, cy = rng.uniform(0.2, 0.8, size=2) * size
    rx, ry = rng.uniform(0.1, 0.3, size=2) * size
    if kind == "rectangle":
        return (np.abs(xs - cx) <= rx) & (np.abs(ys - cy) <= ry)
    if kind == "ellipse":
        return ((xs - cx) / rx) ** 2 + ((ys - cy) / ry) ** 2 <= 1.0
    # Triangle from three points on an ellipse around the center.
    angles = rng.uniform(0.0, 2.0 * np.pi) + np.array([0.0, 2.0, 4.0]) * np.pi / 3.0
    px = cx + rx * np.cos(angles)
    py = cy + ry * np.sin(angles)
    signs = []
    for i in range(3):
        j = (i + 1) % 3
        signs.append((px[j] - px[i]) * (ys - py[i]) - (py[j] - py[i]) * (xs - px[i]))
    signs = np.stack(signs)
    return np.all(signs >= 0, axis=0) | np.all(signs <= 0, axis=0)


def _texture(rng, size: int) -> np.ndarray:
    c1 = rng.uniform(0.0, 1.0, size=3)
    c2 = np.clip(c1 + rng.uniform(-0.25, 0.25, size=3), 0.0, 1.0)
    period = rng.integers(3, 9)
    angle = rng.uniform(0.0, np.pi)
    ys, xs = np.mgrid[0:size, 0:size]
    phase = (np.cos(angle) * xs + np.sin(angle) * ys) / period
    stripe = (np.floor(phase) % 2).astype(bool)
    return np.where(stripe[..., None], c1, c2)


def shape_image(rng: np.random.Generator, size: int = 64, max_shapes: int = 3) -> tuple[np.ndarray, np.ndarray]:
    """One (image, foreground mask) pair."""
    image = _background(rng, size)
    mask = np.zeros((size, size), dtype=bool)
    for _ in range(int(rng.integers(1, max_shapes + 1))):
        kind = SHAPE_KINDS[int(rng.integers(len(SHAPE_KINDS)))]
        shape = _shape_mask(rng, kind, size)
        image = np.where(shape[..., None], _texture(rng, size), image)
        mask |= shape
    return image, mask


def make_shape_corpus(count: int, size: int = 64, seed: int = 0, max_shapes: int = 3) -> ShapeCorpus:
    """``count`` images, reproducible from ``seed``."""
    rng = np.random.default_rng(seed)
    pairs = [shape_image(rng, size, max_shapes) for _ in range(count)]
    images = np.stack([p[0] for p in pairs]) if pairs else np.zeros((0, size, size, 3))
    masks = np.stack([p[1] for p in pairs]) if pairs else np.zeros((0, size, size), dtype=bool)
    return ShapeCorpus(images=images, masks=masks, seed=seed)
