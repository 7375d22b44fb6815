"""Core array carriers: image chips and latent tensors.

Arrays are channel-first (C, H, W) throughout the engine, matching the
on-disk chip container.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NumericError, ShapeError

RADAR_LABELS = ("VV", "VH")
OPTICAL_LABELS = ("R", "G", "B", "NIR")


@dataclass
class ImageChip:
    """A (C, H, W) floating image tile with channel-role labels."""

    data: np.ndarray
    labels: tuple[str, ...]

    def __post_init__(self):
        self.data = np.asarray(self.data)
        self.labels = tuple(self.labels)
        if self.data.ndim != 3:
            raise ShapeError(f"chip must be (C, H, W), got shape {self.data.shape}")
        if len(self.labels) != self.data.shape[0]:
            raise ShapeError(
                f"{len(self.labels)} labels for {self.data.shape[0]} channels"
            )

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]


@dataclass
class LatentTensor:
    """A (c, h, w) latent array tagged with the identity of its codec."""

    data: np.ndarray
    codec_tag: str

    def __post_init__(self):
        self.data = np.asarray(self.data)
        if self.data.ndim != 3:
            raise ShapeError(f"latent must be (c, h, w), got shape {self.data.shape}")

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape


def require_finite(name: str, arr) -> None:
    """Raise NumericError naming `name` if `arr` holds a non-finite value."""
    a = np.asarray(arr)
    if not np.all(np.isfinite(a)):
        raise NumericError(f"non-finite values in {name}")
