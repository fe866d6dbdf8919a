"""Portable graymap (P5) raster I/O, image grids, and dataset export/import."""

from __future__ import annotations

import re
from pathlib import Path

import numpy as np

from .dataset import IMAGE_SIZE, ToyImage


class RasterError(ValueError):
    """Malformed or out-of-contract raster data."""


def to_u8(arr: np.ndarray, lo: float, hi: float) -> np.ndarray:
    arr = np.clip(np.asarray(arr, dtype=np.float64), lo, hi)
    return np.round((arr - lo) / (hi - lo) * 255.0).astype(np.uint8)


def from_u8(arr: np.ndarray, lo: float, hi: float) -> np.ndarray:
    return arr.astype(np.float64) / 255.0 * (hi - lo) + lo


def write_pgm(path, arr: np.ndarray, *, lo: float = -1.0, hi: float = 1.0, comment: str = ""):
    u8 = to_u8(arr, lo, hi)
    if u8.ndim != 2:
        raise RasterError(f"pgm output must be 2-D, got shape {u8.shape}")
    header = b"P5\n"
    if comment:
        header += b"# " + comment.encode() + b"\n"
    header += f"{u8.shape[1]} {u8.shape[0]}\n255\n".encode()
    Path(path).write_bytes(header + u8.tobytes())


def read_pgm(path, *, lo: float = -1.0, hi: float = 1.0) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise RasterError(f"no such raster file: {path}")
    raw = path.read_bytes()
    m = re.match(rb"P5\s+(?:#[^\n]*\n\s*)*(\d+)\s+(\d+)\s+(\d+)\s", raw)
    if not m:
        raise RasterError(f"{path}: not a binary PGM file")
    w, h, maxval = (int(v) for v in m.groups())
    if maxval != 255:
        raise RasterError(f"{path}: unsupported maxval {maxval}")
    data = raw[m.end() :]
    if len(data) < w * h:
        raise RasterError(f"{path}: truncated pixel data")
    u8 = np.frombuffer(data[: w * h], dtype=np.uint8).reshape(h, w)
    return from_u8(u8, lo, hi)


def image_grid(batch: np.ndarray) -> np.ndarray:
    """Tile a (B, 1, H, W) batch into one (H, B*W) row image."""
    b = np.asarray(batch)
    if b.ndim != 4 or b.shape[1] != 1:
        raise RasterError(f"grid expects a (B,1,H,W) batch, got {b.shape}")
    return np.concatenate([b[i, 0] for i in range(b.shape[0])], axis=1)


def grid_tile(grid: np.ndarray, i: int, width: int = IMAGE_SIZE) -> np.ndarray:
    return grid[:, i * width : (i + 1) * width]


def save_dataset(dir_path, images: list[ToyImage], comment: str = ""):
    d = Path(dir_path)
    d.mkdir(parents=True, exist_ok=True)
    lines = []
    for i, im in enumerate(images):
        name = f"{i:05d}.pgm"
        write_pgm(d / name, im.pixels, comment=comment)
        lines.append(f"{name} {im.label}")
    (d / "labels.txt").write_text("\n".join(lines) + "\n")


def load_dataset(dir_path) -> list[ToyImage]:
    d = Path(dir_path)
    index = d / "labels.txt"
    if not index.exists():
        raise RasterError(f"no label index at {index}")
    images = []
    for line in index.read_text().splitlines():
        if not line.strip():
            continue
        name, label = line.split()
        images.append(ToyImage(read_pgm(d / name), int(label)))
    return images
