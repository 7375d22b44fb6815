"""Synthetic paired dataset with an exact translation oracle, plus chip I/O.

Each scene is built from two smooth random fields (elevation, moisture).
The radar chip mixes the fields linearly and invertibly; the optical chip
applies fixed polynomials of the same fields. Optical is therefore a
deterministic function of radar, and `oracle_optical_from_radar` evaluates
that function exactly, which anchors all translation-quality tests.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import ndimage

from .core import ImageChip, OPTICAL_LABELS, RADAR_LABELS
from .errors import DomainError, ParseError, ShapeError

# Invertible field -> radar mixing (rows: VV, VH; columns: elevation, moisture).
DEFAULT_RADAR_MIXING = ((0.8, 0.2), (0.3, 0.7))


def _smooth_field(rng: np.random.Generator, h: int, w: int, smoothness: float) -> np.ndarray:
    """Seeded spectral synthesis: white noise under a Gaussian low-pass, min-max normalized."""
    noise = rng.standard_normal((h, w))
    fy = np.fft.fftfreq(h)[:, None]
    fx = np.fft.fftfreq(w)[None, :]
    weight = np.exp(-2.0 * np.pi**2 * smoothness**2 * (fy**2 + fx**2))
    field = np.fft.ifft2(np.fft.fft2(noise) * weight).real
    lo, hi = field.min(), field.max()
    if hi == lo:
        return np.full((h, w), 0.5)
    return (field - lo) / (hi - lo)


@dataclass
class SceneFields:
    """Underlying smooth fields of one scene, both normalized to [0, 1]."""

    elevation: np.ndarray
    moisture: np.ndarray


def generate_fields(seed: int, h: int, w: int, smoothness: float = 8.0,
                    constant: bool = False) -> SceneFields:
    if h < 32 or w < 32:
        raise DomainError(f"scene dims must be >= 32, got {h}x{w}")
    rng = np.random.default_rng(seed)
    if constant:
        vals = rng.uniform(0.2, 0.8, size=2)
        return SceneFields(np.full((h, w), vals[0]), np.full((h, w), vals[1]))
    return SceneFields(
        _smooth_field(rng, h, w, smoothness),
        _smooth_field(rng, h, w, smoothness),
    )


def _optical_from_fields(e: np.ndarray, m: np.ndarray) -> np.ndarray:
    """Fixed smooth reflectance polynomials of (elevation, moisture)."""
    r = 0.15 + 0.35 * e**2 + 0.10 * m
    g = 0.10 + 0.40 * e * (1.0 - m) + 0.15 * m**2
    b = 0.05 + 0.25 * (1.0 - e) ** 2 + 0.10 * m
    nir = 0.20 + 0.60 * m * (1.0 - e) + 0.15 * e**2
    return np.stack([r, g, b, nir])


def generate_pair(seed: int, h: int, w: int, smoothness: float = 8.0,
                  constant: bool = False,
                  radar_mixing=DEFAULT_RADAR_MIXING) -> tuple[ImageChip, ImageChip]:
    """One paired (radar 2ch, optical 4ch) scene; bit-identical for equal seeds."""
    fields = generate_fields(seed, h, w, smoothness=smoothness, constant=constant)
    e, m = fields.elevation, fields.moisture
    (a, b_), (c, d) = radar_mixing
    if a * d - b_ * c == 0.0:
        raise DomainError("radar mixing matrix must be invertible")
    vv = a * e + b_ * m
    vh = c * e + d * m
    radar = np.stack([vv, vh]).astype(np.float32)
    optical = _optical_from_fields(e, m).astype(np.float32)
    return ImageChip(radar, RADAR_LABELS), ImageChip(optical, OPTICAL_LABELS)


def oracle_optical_from_radar(radar: ImageChip,
                              radar_mixing=DEFAULT_RADAR_MIXING) -> ImageChip:
    """The exact translation target: invert the mixing, apply the optical map."""
    if radar.channels != 2:
        raise ShapeError(f"radar chip must have 2 channels, got {radar.channels}")
    (a, b_), (c, d) = radar_mixing
    det = a * d - b_ * c
    if det == 0.0:
        raise DomainError("radar mixing matrix must be invertible")
    vv = radar.data[0].astype(np.float64)
    vh = radar.data[1].astype(np.float64)
    e = (d * vv - b_ * vh) / det
    m = (-c * vv + a * vh) / det
    return ImageChip(_optical_from_fields(e, m).astype(np.float32), OPTICAL_LABELS)


def chip(image: ImageChip, size: int) -> list[ImageChip]:
    """Slice into non-overlapping size x size tiles, row-major."""
    c, h, w = image.data.shape
    if size <= 0 or h % size or w % size:
        raise DomainError(f"tile size {size} does not divide {h}x{w}")
    tiles = []
    for i in range(h // size):
        for j in range(w // size):
            tiles.append(ImageChip(
                image.data[:, i * size:(i + 1) * size, j * size:(j + 1) * size].copy(),
                image.labels,
            ))
    return tiles


@dataclass(frozen=True)
class AugmentSpec:
    hflip: bool
    vflip: bool
    angle_deg: float


def sample_augmentation(seed: int, max_angle: float = 20.0) -> AugmentSpec:
    rng = np.random.default_rng(seed)
    return AugmentSpec(
        hflip=bool(rng.random() < 0.5),
        vflip=bool(rng.random() < 0.5),
        angle_deg=float(rng.uniform(-max_angle, max_angle)),
    )


def apply_augmentation(data: np.ndarray, spec: AugmentSpec) -> np.ndarray:
    """Flips then rotation; bilinear sampling with reflect padding."""
    out = data
    if spec.hflip:
        out = out[:, :, ::-1]
    if spec.vflip:
        out = out[:, ::-1, :]
    if spec.angle_deg != 0.0:
        out = ndimage.rotate(out, spec.angle_deg, axes=(1, 2),
                             reshape=False, order=1, mode="reflect")
    return np.ascontiguousarray(out)


def augment_pair(radar: ImageChip, optical: ImageChip, seed: int,
                 spec: AugmentSpec | None = None) -> tuple[ImageChip, ImageChip]:
    """Apply one sampled transform jointly: concatenate channels, transform, split back."""
    if radar.data.shape[1:] != optical.data.shape[1:]:
        raise ShapeError("paired chips must share spatial dims")
    if spec is None:
        spec = sample_augmentation(seed)
    stacked = np.concatenate([radar.data, optical.data], axis=0)
    moved = apply_augmentation(stacked, spec)
    nr = radar.channels
    return (
        ImageChip(moved[:nr].astype(radar.data.dtype), radar.labels),
        ImageChip(moved[nr:].astype(optical.data.dtype), optical.labels),
    )


def split_dataset(pairs: Sequence, fractions=(0.7, 0.2, 0.1), seed: int = 0):
    """Seeded shuffle, then contiguous (train, test, val) slices.

    Test and val sizes are floored; the remainder goes to train.
    """
    n = len(pairs)
    if n == 0:
        raise DomainError("cannot split an empty dataset")
    if abs(sum(fractions) - 1.0) > 1e-9 or len(fractions) != 3:
        raise DomainError(f"fractions must be three values summing to 1, got {fractions}")
    n_test = int(np.floor(fractions[1] * n))
    n_val = int(np.floor(fractions[2] * n))
    n_train = n - n_test - n_val
    order = np.random.default_rng(seed).permutation(n)
    picked = [pairs[i] for i in order]
    return (picked[:n_train],
            picked[n_train:n_train + n_test],
            picked[n_train + n_test:])


# --- binary chip container ---------------------------------------------------

_CHIP_MAGIC = b"CHIP"
_CHIP_VERSION = 1
_DTYPE_F32 = 0


def write_chip(path: str | Path, chip_: ImageChip) -> None:
    """Serialize as little-endian float32, header before payload."""
    data = np.ascontiguousarray(chip_.data, dtype="<f4")
    c, h, w = data.shape
    parts = [_CHIP_MAGIC,
             struct.pack("<HBB", _CHIP_VERSION, _DTYPE_F32, 0),
             struct.pack("<III", c, h, w)]
    for label in chip_.labels:
        raw = label.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)))
        parts.append(raw)
    parts.append(data.tobytes())
    Path(path).write_bytes(b"".join(parts))


def read_chip(path: str | Path) -> ImageChip:
    blob = Path(path).read_bytes()
    if blob[:4] != _CHIP_MAGIC:
        raise ParseError(f"{path}: bad magic {blob[:4]!r}, expected {_CHIP_MAGIC!r}")
    off = 4
    version, dtype_code, _ = struct.unpack_from("<HBB", blob, off)
    off += 4
    if version != _CHIP_VERSION:
        raise ParseError(f"{path}: unsupported chip version {version}")
    if dtype_code != _DTYPE_F32:
        raise ParseError(f"{path}: unsupported dtype code {dtype_code}")
    c, h, w = struct.unpack_from("<III", blob, off)
    off += 12
    labels = []
    for _ in range(c):
        if off + 2 > len(blob):
            raise ParseError(f"{path}: truncated label table")
        (n,) = struct.unpack_from("<H", blob, off)
        off += 2
        labels.append(blob[off:off + n].decode("utf-8"))
        off += n
    expected = c * h * w * 4
    payload = blob[off:]
    if len(payload) != expected:
        raise ParseError(
            f"{path}: payload holds {len(payload)} bytes, expected {expected}"
        )
    data = np.frombuffer(payload, dtype="<f4").reshape(c, h, w).copy()
    return ImageChip(data, tuple(labels))


# --- multi-tensor container (checkpoints, codecs, results) -------------------

_TENS_MAGIC = b"TENS"
_TENS_VERSION = 1
_TENS_DTYPES = {"<f4": 0, "<f8": 1, "<i8": 2}
_TENS_CODES = {v: k for k, v in _TENS_DTYPES.items()}


def write_tensors(path: str | Path, tensors: dict[str, np.ndarray]) -> None:
    """Named-tensor archive; float32/float64/int64, little-endian, order-preserving."""
    parts = [_TENS_MAGIC, struct.pack("<HI", _TENS_VERSION, len(tensors))]
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        if arr.dtype == np.float32:
            arr = np.ascontiguousarray(arr, dtype="<f4")
        elif arr.dtype == np.float64:
            arr = np.ascontiguousarray(arr, dtype="<f8")
        elif arr.dtype == np.int64:
            arr = np.ascontiguousarray(arr, dtype="<i8")
        else:
            raise DomainError(f"tensor {name!r} has unsupported dtype {arr.dtype}")
        raw = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<BB", _TENS_DTYPES[arr.dtype.str], arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    Path(path).write_bytes(b"".join(parts))


def read_tensors(path: str | Path) -> dict[str, np.ndarray]:
    blob = Path(path).read_bytes()
    if blob[:4] != _TENS_MAGIC:
        raise ParseError(f"{path}: bad magic {blob[:4]!r}, expected {_TENS_MAGIC!r}")
    version, count = struct.unpack_from("<HI", blob, 4)
    if version != _TENS_VERSION:
        raise ParseError(f"{path}: unsupported tensor archive version {version}")
    off = 10
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        try:
            (nlen,) = struct.unpack_from("<H", blob, off)
            off += 2
            name = blob[off:off + nlen].decode("utf-8")
            off += nlen
            dtype_code, ndim = struct.unpack_from("<BB", blob, off)
            off += 2
            shape = struct.unpack_from(f"<{ndim}I", blob, off)
            off += 4 * ndim
        except struct.error as e:
            raise ParseError(f"{path}: truncated tensor header") from e
        if dtype_code not in _TENS_CODES:
            raise ParseError(f"{path}: unknown dtype code {dtype_code}")
        dtype = np.dtype(_TENS_CODES[dtype_code])
        nbytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
        if off + nbytes > len(blob):
            raise ParseError(
                f"{path}: tensor {name!r} payload truncated "
                f"({len(blob) - off} of {nbytes} bytes)"
            )
        out[name] = np.frombuffer(blob[off:off + nbytes], dtype=dtype).reshape(shape).copy()
        off += nbytes
    if off != len(blob):
        raise ParseError(f"{path}: {len(blob) - off} trailing bytes after last tensor")
    return out


# --- dataset directory layout -------------------------------------------------

MANIFEST_NAME = "manifest.json"


def generate_dataset(out_dir: str | Path, seed: int, scenes: int, size: int,
                     chip_size: int | None = None, smoothness: float = 8.0,
                     fractions=(0.7, 0.2, 0.1),
                     radar_mixing=DEFAULT_RADAR_MIXING) -> dict:
    """Write paired chip files plus a manifest; returns the manifest dict."""
    if scenes <= 0:
        raise DomainError("need at least one scene")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    chip_size = chip_size or size
    scene_seeds = np.random.SeedSequence(seed).generate_state(scenes).tolist()

    pairs = []
    for scene_idx, scene_seed in enumerate(scene_seeds):
        radar, optical = generate_pair(scene_seed, size, size, smoothness=smoothness,
                                       radar_mixing=radar_mixing)
        radar_tiles = chip(radar, chip_size) if chip_size != size else [radar]
        optical_tiles = chip(optical, chip_size) if chip_size != size else [optical]
        for tile_idx, (rt, ot) in enumerate(zip(radar_tiles, optical_tiles)):
            pairs.append({"scene": scene_idx, "scene_seed": int(scene_seed),
                          "tile": tile_idx, "radar_chip": rt, "optical_chip": ot})

    train, test, val = split_dataset(pairs, fractions=fractions, seed=seed)
    for split_name, members in (("train", train), ("test", test), ("val", val)):
        for p in members:
            p["split"] = split_name

    entries = []
    for idx, p in enumerate(pairs):
        pid = f"pair_{idx:04d}"
        radar_path = f"{pid}_radar.chp"
        optical_path = f"{pid}_optical.chp"
        write_chip(out / radar_path, p["radar_chip"])
        write_chip(out / optical_path, p["optical_chip"])
        entries.append({"id": pid, "radar": radar_path, "optical": optical_path,
                        "split": p["split"], "scene": p["scene"],
                        "scene_seed": p["scene_seed"], "tile": p["tile"]})

    manifest = {
        "seed": seed, "scenes": scenes, "size": size, "chip_size": chip_size,
        "smoothness": smoothness, "fractions": list(fractions),
        "radar_mixing": [list(row) for row in radar_mixing],
        "pairs": entries,
    }
    (out / MANIFEST_NAME).write_text(json.dumps(manifest, indent=2) + "\n")
    return manifest


def load_manifest(data_dir: str | Path) -> dict:
    path = Path(data_dir) / MANIFEST_NAME
    if not path.exists():
        raise ParseError(f"no {MANIFEST_NAME} in {data_dir}")
    try:
        manifest = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ParseError(f"invalid manifest JSON in {path}: {e}") from e
    if "pairs" not in manifest:
        raise ParseError(f"{path}: manifest is missing the pairs list")
    return manifest


def load_split(data_dir: str | Path, manifest: dict, split: str,
               role: str) -> tuple[list[str], list[ImageChip]]:
    """Chips of one role ('radar'/'optical') in one split, in manifest order."""
    if role not in ("radar", "optical"):
        raise DomainError(f"role must be radar or optical, got {role!r}")
    base = Path(data_dir)
    ids, chips = [], []
    for entry in manifest["pairs"]:
        if entry["split"] != split:
            continue
        ids.append(entry["id"])
        chips.append(read_chip(base / entry[role]))
    return ids, chips
