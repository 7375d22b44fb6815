"""Deterministic PNG rendering: RGB chips and diverging index maps.

Index maps use a fixed blue-white-green colormap: -1 is blue, 0 is white,
+1 is green; values are clamped to [-1, 1] first.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ShapeError

_BLUE = np.array([0.0, 0.0, 255.0])
_WHITE = np.array([255.0, 255.0, 255.0])
_GREEN = np.array([0.0, 160.0, 0.0])


def rgb_to_image(rgb: np.ndarray) -> np.ndarray:
    """(3, H, W) reflectance, unit-clipped, to (H, W, 3) uint8."""
    rgb = np.asarray(rgb)
    if rgb.ndim != 3 or rgb.shape[0] != 3:
        raise ShapeError(f"expected (3, H, W) array, got {rgb.shape}")
    clipped = np.clip(rgb, 0.0, 1.0)
    return np.round(clipped * 255.0).astype(np.uint8).transpose(1, 2, 0)


def index_to_image(index_map: np.ndarray) -> np.ndarray:
    """(H, W) index in [-1, 1] to (H, W, 3) uint8 via the diverging colormap."""
    v = np.clip(np.asarray(index_map, dtype=np.float64), -1.0, 1.0)
    out = np.empty(v.shape + (3,))
    neg = v < 0
    t = np.abs(v)[..., None]
    out[neg] = ((1.0 - t) * _WHITE + t * _BLUE)[neg]
    out[~neg] = ((1.0 - t) * _WHITE + t * _GREEN)[~neg]
    return np.round(out).astype(np.uint8)


def side_by_side(left: np.ndarray, right: np.ndarray, gap: int = 4) -> np.ndarray:
    """Join two (H, W, 3) uint8 images horizontally with a white gap."""
    if left.shape != right.shape:
        raise ShapeError(f"panel shapes differ: {left.shape} vs {right.shape}")
    h = left.shape[0]
    spacer = np.full((h, gap, 3), 255, np.uint8)
    return np.concatenate([left, spacer, right], axis=1)


def write_png(path: str | Path, image: np.ndarray) -> None:
    Image.fromarray(image, mode="RGB").save(Path(path), format="PNG")
