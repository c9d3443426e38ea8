"""Deterministic three-class synthetic segmentation data.

Classes: 0 background, 1 axis-aligned rectangle, 2 disc. Every image gets
one rectangle and one disc (a second rectangle appears with probability
1/2), drawn in that order so discs overwrite rectangles where they
overlap. Class colors are well separated in RGB and jittered per image;
pixel noise is Gaussian. All draws come from a per-image stream keyed by
(seed, split, index), so any sample can be regenerated in isolation and
the dataset is independent of generation order.

The recipe is pinned: changing shape-size ranges, colors, or noise scale
invalidates frozen convergence numbers in the tests.
"""

from __future__ import annotations

import numpy as np

from .rng import stream

SIZE = 64
NOISE_SIGMA = 0.06
# (base RGB, jitter half-range) per class, chosen linearly separable.
CLASS_COLORS = (
    ((0.20, 0.25, 0.70), 0.06),
    ((0.85, 0.20, 0.20), 0.06),
    ((0.15, 0.80, 0.30), 0.06),
)


def _color(rng, cls: int) -> np.ndarray:
    base, jitter = CLASS_COLORS[cls]
    return np.asarray(base, dtype=np.float64) + rng.uniform(-jitter, jitter, size=3)


def _paint_rect(rng, image, mask, size: int) -> None:
    hh = int(rng.integers(7, 17))
    hw = int(rng.integers(7, 17))
    cy = int(rng.integers(hh + 2, size - hh - 2))
    cx = int(rng.integers(hw + 2, size - hw - 2))
    color = _color(rng, 1)
    image[:, cy - hh:cy + hh, cx - hw:cx + hw] = color[:, None, None]
    mask[cy - hh:cy + hh, cx - hw:cx + hw] = 1


def _paint_disc(rng, image, mask, size: int) -> None:
    r = int(rng.integers(8, 16))
    cy = int(rng.integers(r + 2, size - r - 2))
    cx = int(rng.integers(r + 2, size - r - 2))
    yy, xx = np.ogrid[:size, :size]
    inside = (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r
    color = _color(rng, 2)
    image[:, inside] = color[:, None]
    mask[inside] = 2


# largest rectangle half-extent (16) plus its 2-pixel placement margin
MIN_SIZE = 2 * (16 + 2) + 1


def make_sample(seed: int, split: str, index: int, size: int = SIZE):
    """One (image, mask) pair: float32 (3, size, size) in [0, 1], uint8 (size, size)."""
    if size < MIN_SIZE:
        raise ValueError(f"size {size} leaves no room for the shapes; need >= {MIN_SIZE}")
    rng = stream(seed, "synthetic", split, str(index))
    image = np.empty((3, size, size), dtype=np.float64)
    image[:] = _color(rng, 0)[:, None, None]
    mask = np.zeros((size, size), dtype=np.uint8)
    _paint_rect(rng, image, mask, size)
    if rng.integers(0, 2):
        _paint_rect(rng, image, mask, size)
    _paint_disc(rng, image, mask, size)
    image += rng.normal(0.0, NOISE_SIGMA, size=image.shape)
    return np.clip(image, 0.0, 1.0).astype(np.float32), mask


def make_dataset(seed: int, split: str, count: int, size: int = SIZE) -> list:
    """``count`` samples for ``split``; item i is make_sample(seed, split, i)."""
    return [make_sample(seed, split, i, size) for i in range(count)]
