"""Procedural 32x32 grayscale shape dataset: four classes with randomized
pose, scale, fill, and texture. Deterministic for a fixed seed."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

IMAGE_SIZE = 32
CLASSES = ("ellipse", "rectangle", "triangle", "annulus")
NUM_CLASSES = len(CLASSES)
_SUPERSAMPLE = 4


@dataclass
class ToyImage:
    pixels: np.ndarray  # (32, 32) float64 in [-1, 1]
    label: int


def _coverage_mask(label: int, cx, cy, half, ratio, rot) -> np.ndarray:
    """Soft shape indicator rendered at 4x supersampling, box-downsampled."""
    n = IMAGE_SIZE * _SUPERSAMPLE
    axis = (np.arange(n) + 0.5) / n  # pixel centers in [0, 1]
    xs, ys = np.meshgrid(axis, axis)
    u = (xs - cx) * np.cos(rot) + (ys - cy) * np.sin(rot)
    v = -(xs - cx) * np.sin(rot) + (ys - cy) * np.cos(rot)
    if label == 0:  # ellipse
        inside = (u / half) ** 2 + (v / (half * ratio)) ** 2 <= 1.0
    elif label == 1:  # rectangle
        inside = (np.abs(u) <= half) & (np.abs(v) <= half * ratio)
    elif label == 2:  # triangle (equilateral, circumradius half)
        inside = np.ones_like(u, dtype=bool)
        for k in range(3):
            ang = 2.0 * np.pi * k / 3.0  # edge normals in the local frame
            nx, ny = np.cos(ang), np.sin(ang)
            inside &= u * nx + v * ny <= half * 0.5
    else:  # annulus
        r = np.sqrt(u * u + v * v)
        inside = (r <= half) & (r >= 0.55 * half)
    m = inside.astype(np.float64)
    s = _SUPERSAMPLE
    return m.reshape(IMAGE_SIZE, s, IMAGE_SIZE, s).mean(axis=(1, 3))


def gen_dataset(n: int, seed: int) -> list[ToyImage]:
    """n labeled shape images, round-robin over the four classes."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    rng = np.random.default_rng(seed)
    images = []
    for i in range(n):
        label = i % NUM_CLASSES
        cx = rng.uniform(0.38, 0.62)
        cy = rng.uniform(0.38, 0.62)
        scale = rng.uniform(0.3, 0.8)  # shape extent as a fraction of frame
        ratio = rng.uniform(0.55, 1.0)
        rot = rng.uniform(0.0, 2.0 * np.pi)
        fill = rng.uniform(0.2, 1.0)
        mask = _coverage_mask(label, cx, cy, scale / 2.0, ratio, rot)
        img = -1.0 + mask * (fill + 1.0)
        img += rng.uniform(-0.04, 0.04, size=img.shape)
        images.append(ToyImage(np.clip(img, -1.0, 1.0), label))
    return images


def as_batch(images) -> tuple[np.ndarray, np.ndarray]:
    """Stack ToyImages into a (B, 1, 32, 32) batch plus a label vector."""
    xs = np.stack([im.pixels for im in images])[:, None, :, :]
    ys = np.array([im.label for im in images], dtype=np.intp)
    return xs, ys
