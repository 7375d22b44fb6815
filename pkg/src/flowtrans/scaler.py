"""Percentile-based per-channel chip normalization.

Values are mapped with scaled = (value - pmin) / (pmax - pmin + eps) where
pmin/pmax are percentiles of the fitting data. No clipping is applied, so
out-of-range raw values land outside [0, 1] and remain invertible; an
optional raw-unit ceiling (clip_high) covers production inputs whose upper
tail is inflated.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

from .core import ImageChip
from .errors import DegenerateError, DomainError, ParseError, ShapeError

RADAR_PERCENTILES = (0.1, 99.9)
OPTICAL_PERCENTILES = (1.0, 98.0)


@dataclass
class ScalerParams:
    """Per-channel affine bounds fit from percentiles."""

    pmin: np.ndarray
    pmax: np.ndarray
    eps: float
    pmin_pct: float
    pmax_pct: float
    clip_high: float | None = None

    def __post_init__(self):
        self.pmin = np.asarray(self.pmin, dtype=np.float64)
        self.pmax = np.asarray(self.pmax, dtype=np.float64)
        if self.pmin.shape != self.pmax.shape or self.pmin.ndim != 1:
            raise ShapeError("pmin/pmax must be matching per-channel vectors")
        if np.any(self.pmax <= self.pmin):
            raise DegenerateError("pmax must exceed pmin on every channel")

    @property
    def channels(self) -> int:
        return self.pmin.size


def fit(chips: Iterable[ImageChip], pmin_pct: float, pmax_pct: float,
        eps: float = 1e-6, clip_high: float | None = None) -> ScalerParams:
    """Fit per-channel percentile bounds over all pixels of all chips.

    Percentiles use linear interpolation between adjacent order statistics.
    """
    chips = list(chips)
    if not chips:
        raise DomainError("cannot fit a scaler on an empty chip collection")
    if not (0.0 <= pmin_pct < pmax_pct <= 100.0):
        raise DomainError(f"need 0 <= pmin_pct < pmax_pct <= 100, got ({pmin_pct}, {pmax_pct})")
    channels = chips[0].channels
    for c in chips:
        if c.channels != channels:
            raise ShapeError(f"chips disagree on channel count: {c.channels} vs {channels}")
    flat = np.concatenate(
        [c.data.reshape(channels, -1).astype(np.float64) for c in chips], axis=1
    )
    pmin = np.percentile(flat, pmin_pct, axis=1, method="linear")
    pmax = np.percentile(flat, pmax_pct, axis=1, method="linear")
    if np.any(pmax == pmin):
        bad = int(np.nonzero(pmax == pmin)[0][0])
        raise DegenerateError(f"channel {bad} is constant between the fitted percentiles")
    return ScalerParams(pmin=pmin, pmax=pmax, eps=eps,
                        pmin_pct=float(pmin_pct), pmax_pct=float(pmax_pct),
                        clip_high=clip_high)


def _check_channels(p: ScalerParams, chip: ImageChip) -> None:
    if chip.channels != p.channels:
        raise ShapeError(f"chip has {chip.channels} channels, scaler expects {p.channels}")


def transform(p: ScalerParams, chip: ImageChip) -> ImageChip:
    """Apply the per-channel affine map; monotone, not clipped to [0, 1]."""
    _check_channels(p, chip)
    x = chip.data.astype(np.float64, copy=False)
    if p.clip_high is not None:
        x = np.minimum(x, p.clip_high)
    lo = p.pmin[:, None, None]
    span = (p.pmax - p.pmin + p.eps)[:, None, None]
    scaled = (x - lo) / span
    return ImageChip(scaled.astype(chip.data.dtype), chip.labels)


def inverse_transform(p: ScalerParams, chip: ImageChip) -> ImageChip:
    """Algebraic inverse of transform (exact when clip_high is unset)."""
    _check_channels(p, chip)
    x = chip.data.astype(np.float64, copy=False)
    lo = p.pmin[:, None, None]
    span = (p.pmax - p.pmin + p.eps)[:, None, None]
    raw = x * span + lo
    return ImageChip(raw.astype(chip.data.dtype), chip.labels)


_REQUIRED_FIELDS = ("channels", "pmin", "pmax", "eps", "pmin_pct", "pmax_pct")


def save(p: ScalerParams, path: str | Path) -> None:
    doc: dict = {
        "channels": p.channels,
        "pmin": list(p.pmin),
        "pmax": list(p.pmax),
        "eps": p.eps,
        "pmin_pct": p.pmin_pct,
        "pmax_pct": p.pmax_pct,
    }
    if p.clip_high is not None:
        doc["clip_high"] = p.clip_high
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")


def load(path: str | Path) -> ScalerParams:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise ParseError(f"invalid scaler JSON in {path}: {e}") from e
    if not isinstance(doc, dict):
        raise ParseError(f"scaler file {path} must hold a JSON object")
    for field in _REQUIRED_FIELDS:
        if field not in doc:
            raise ParseError(f"scaler file {path} is missing field {field!r}")
    known = set(_REQUIRED_FIELDS) | {"clip_high"}
    extras = sorted(set(doc) - known)
    if extras:
        warnings.warn(f"scaler file {path} has unknown fields {extras}, ignoring")
    p = ScalerParams(
        pmin=np.asarray(doc["pmin"], dtype=np.float64),
        pmax=np.asarray(doc["pmax"], dtype=np.float64),
        eps=float(doc["eps"]),
        pmin_pct=float(doc["pmin_pct"]),
        pmax_pct=float(doc["pmax_pct"]),
        clip_high=None if doc.get("clip_high") is None else float(doc["clip_high"]),
    )
    if p.channels != int(doc["channels"]):
        raise ParseError(f"scaler file {path}: channels field disagrees with pmin/pmax length")
    return p
