"""Least-squares per-pixel affine baseline shared by the experiment scripts."""

import json
from pathlib import Path

import numpy as np

from flowtrans import data as data_mod
from flowtrans import scaler as scaler_mod
from flowtrans.codec import load_codec


def least_squares_pixel_map(z1: np.ndarray, z2: np.ndarray):
    """Fit z2 ~ A z1 + b over every latent pixel vector; returns (A, b)."""
    c = z1.shape[1]
    x = z1.transpose(0, 2, 3, 1).reshape(-1, c).astype(np.float64)
    y = z2.transpose(0, 2, 3, 1).reshape(-1, c).astype(np.float64)
    x_aug = np.concatenate([x, np.ones((x.shape[0], 1))], axis=1)
    coef, *_ = np.linalg.lstsq(x_aug, y, rcond=None)
    return coef[:c].T, coef[c]


def apply_pixel_map(a: np.ndarray, b: np.ndarray, z1: np.ndarray) -> np.ndarray:
    n, c, h, w = z1.shape
    x = z1.transpose(0, 2, 3, 1).reshape(-1, c).astype(np.float64)
    return (x @ a.T + b).reshape(n, h, w, c).transpose(0, 3, 1, 2)


def latent_split(run_dir: str | Path, split: str):
    """Paired (z1, z2) latent arrays of one split, using the run's artifacts."""
    run_dir = Path(run_dir)
    run_doc = json.loads((run_dir / "run.json").read_text())
    data_dir = Path(run_doc["data_dir"])
    manifest = data_mod.load_manifest(data_dir)
    radar_scaler = scaler_mod.load(run_dir / "scaler_radar.json")
    optical_scaler = scaler_mod.load(run_dir / "scaler_optical.json")
    source_codec = load_codec(run_dir / "codec_radar.json")
    target_codec = load_codec(run_dir / "codec_optical.json")
    _, radar = data_mod.load_split(data_dir, manifest, split, "radar")
    _, optical = data_mod.load_split(data_dir, manifest, split, "optical")
    z1 = np.stack([source_codec.encode(scaler_mod.transform(radar_scaler, c)).data
                   for c in radar])
    z2 = np.stack([target_codec.encode(scaler_mod.transform(optical_scaler, c)).data
                   for c in optical])
    return z1, z2
