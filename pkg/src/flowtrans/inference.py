"""Euler accumulation along a schedule grid, decoding, and index derivation.

Starting from the radar latent, the model's velocity is accumulated over the
grid: x <- x + M([x, z_src], s_i) * (s_{i+1} - s_i) for i = 0..T-2. The final
latent is decoded to a 4-channel chip, split into RGB/NIR, and reduced to
vegetation and water index maps.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .core import ImageChip, LatentTensor
from .errors import ConfigError, DomainError, NumericError, ShapeError
from .schedules import Schedule, StepGrid, schedule_grid


@dataclass(frozen=True)
class InferConfig:
    steps: int = 100
    schedule: Schedule = field(default_factory=Schedule.cosine)
    index_eps: float = 1e-7
    clip_unit: bool = False

    def __post_init__(self):
        if self.steps < 2:
            raise DomainError("inference needs at least 2 grid points")
        if not self.index_eps > 0:
            raise DomainError("index_eps must be positive")


@dataclass
class TranslationResult:
    chip_id: str
    latent: LatentTensor
    chip: ImageChip
    rgb: ImageChip
    nir: ImageChip
    ndvi: np.ndarray
    ndwi: np.ndarray


def translate_latents(model, z1: torch.Tensor, grid: StepGrid) -> torch.Tensor:
    """Batched Euler accumulation; float64 accumulator, model fed at its own dtype."""
    if z1.ndim != 4:
        raise ShapeError(f"expected (B, c, h, w) latents, got {tuple(z1.shape)}")
    param = next(model.parameters(), None)
    feed_dtype = param.dtype if param is not None else z1.dtype
    x = z1.double().clone()
    cond = z1.to(feed_dtype)
    steps = grid.steps
    deltas = grid.deltas
    with torch.no_grad():
        for i in range(len(steps) - 1):
            dz = model(x.to(feed_dtype), cond, float(steps[i]))
            x = x + dz.double() * float(deltas[i])
            bad = ~torch.isfinite(x).reshape(x.shape[0], -1).all(dim=1)
            if bad.any():
                raise NumericError(
                    f"non-finite latent at step {i} for batch element "
                    f"{int(bad.nonzero()[0, 0])}"
                )
    return x


def translate(model, z_src: LatentTensor, cfg: InferConfig) -> LatentTensor:
    """Single-latent translation along the configured schedule grid."""
    grid = schedule_grid(cfg.schedule, cfg.steps)
    z1 = torch.from_numpy(np.ascontiguousarray(z_src.data))
    out = translate_latents(model, z1.unsqueeze(0), grid).squeeze(0)
    return LatentTensor(out.numpy().astype(z_src.data.dtype), z_src.codec_tag)


def split_channels(chip_: ImageChip) -> tuple[ImageChip, ImageChip]:
    """Views over the RGB channels (0-2) and the NIR channel (3)."""
    if chip_.channels != 4:
        raise ShapeError(f"expected a 4-channel R,G,B,NIR chip, got {chip_.channels}")
    rgb = ImageChip(chip_.data[0:3], chip_.labels[0:3])
    nir = ImageChip(chip_.data[3:4], chip_.labels[3:4])
    return rgb, nir


def ndvi(nir: np.ndarray, red: np.ndarray, eps: float = 1e-7) -> np.ndarray:
    """(NIR - Red) / (NIR + Red + eps), elementwise."""
    nir = np.asarray(nir)
    red = np.asarray(red)
    if nir.shape != red.shape:
        raise ShapeError(f"band shapes differ: {nir.shape} vs {red.shape}")
    return (nir - red) / (nir + red + eps)


def ndwi(green: np.ndarray, nir: np.ndarray, eps: float = 1e-7) -> np.ndarray:
    """(Green - NIR) / (Green + NIR + eps), elementwise."""
    green = np.asarray(green)
    nir = np.asarray(nir)
    if green.shape != nir.shape:
        raise ShapeError(f"band shapes differ: {green.shape} vs {nir.shape}")
    return (green - nir) / (green + nir + eps)


def derive_result(chip_id: str, latent: LatentTensor, decoded: ImageChip,
                  cfg: InferConfig) -> TranslationResult:
    """Split a decoded 4-channel chip and compute both index maps."""
    if cfg.clip_unit:
        decoded = ImageChip(np.clip(decoded.data, 0.0, 1.0), decoded.labels)
    rgb, nir_chip = split_channels(decoded)
    red = decoded.data[0].astype(np.float64)
    green = decoded.data[1].astype(np.float64)
    nir_band = decoded.data[3].astype(np.float64)
    return TranslationResult(
        chip_id=chip_id,
        latent=latent,
        chip=decoded,
        rgb=rgb,
        nir=nir_chip,
        ndvi=ndvi(nir_band, red, cfg.index_eps),
        ndwi=ndwi(green, nir_band, cfg.index_eps),
    )


def check_codec_compat(source_codec, target_codec) -> None:
    s1, s2 = source_codec.spec, target_codec.spec
    if (s1.channels, s1.spatial_factor) != (s2.channels, s2.spatial_factor):
        raise ConfigError(
            f"codecs disagree on latent spec: {s1.channels}ch/f{s1.spatial_factor} "
            f"vs {s2.channels}ch/f{s2.spatial_factor}"
        )


def run_inference(model, source_codec, target_codec, chips: list[ImageChip],
                  cfg: InferConfig, ids: list[str] | None = None) -> list[TranslationResult]:
    """Encode -> translate -> decode -> split -> indices, per scaled radar chip."""
    check_codec_compat(source_codec, target_codec)
    if ids is None:
        ids = [f"chip_{i:04d}" for i in range(len(chips))]
    if len(ids) != len(chips):
        raise DomainError("ids and chips must have equal length")

    latents = []
    for cid, c in zip(ids, chips):
        try:
            latents.append(source_codec.encode(c))
        except Exception as e:
            raise type(e)(f"chip {cid}: {e}") from e
    if not latents:
        return []

    grid = schedule_grid(cfg.schedule, cfg.steps)
    z1 = torch.from_numpy(np.stack([z.data.astype(np.float32) for z in latents]))
    try:
        out = translate_latents(model, z1, grid)
    except NumericError as e:
        raise NumericError(f"translation failed: {e}") from e

    results = []
    for i, cid in enumerate(ids):
        z_hat = LatentTensor(out[i].numpy().astype(np.float32), target_codec.tag)
        try:
            decoded = target_codec.decode(z_hat)
            results.append(derive_result(cid, z_hat, decoded, cfg))
        except Exception as e:
            raise type(e)(f"chip {cid}: {e}") from e
    return results


def truth_result(target_codec, optical: ImageChip, cfg: InferConfig,
                 chip_id: str) -> TranslationResult:
    """Package a ground-truth optical chip in the same shape as a prediction."""
    latent = target_codec.encode(optical)
    return derive_result(chip_id, latent, optical, cfg)


# --- result persistence -------------------------------------------------------


def save_result(path: str | Path, result: TranslationResult) -> None:
    from .data import write_tensors
    write_tensors(path, {
        "latent": result.latent.data.astype(np.float32),
        "decoded": result.chip.data.astype(np.float32),
        "ndvi": result.ndvi.astype(np.float32),
        "ndwi": result.ndwi.astype(np.float32),
    })


def load_result(path: str | Path, chip_id: str, codec_tag: str,
                labels=("R", "G", "B", "NIR")) -> TranslationResult:
    from .data import read_tensors
    tensors = read_tensors(path)
    decoded = ImageChip(tensors["decoded"], labels)
    rgb, nir_chip = split_channels(decoded)
    return TranslationResult(
        chip_id=chip_id,
        latent=LatentTensor(tensors["latent"], codec_tag),
        chip=decoded,
        rgb=rgb,
        nir=nir_chip,
        ndvi=tensors["ndvi"],
        ndwi=tensors["ndwi"],
    )
