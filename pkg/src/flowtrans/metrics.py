"""Evaluation metrics (MSE, R^2, PSNR, SSIM) and Table-style reporting.

SSIM follows the standard reference formulation: 11x11 Gaussian window with
sigma 1.5, K1=0.01, K2=0.03, Gaussian-weighted (biased) moments, and the
mean taken over the fully-valid interior.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import correlate1d

from .errors import DegenerateError, DomainError, PairingError, ShapeError
from .inference import TranslationResult

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5

REPORT_COLUMNS = ("schedule", "steps", "seed", "MSE_latent", "R2_latent",
                  "RGB_SSIM", "RGB_PSNR", "NDVI_SSIM", "NDWI_SSIM")


def _pair(a, b) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"shapes differ: {a.shape} vs {b.shape}")
    return a, b


def mse(a, b) -> float:
    a, b = _pair(a, b)
    return float(np.mean((a - b) ** 2))


def r2(pred, target) -> float:
    """1 - SS_res / SS_tot with SS_tot about the target mean over all elements."""
    pred, target = _pair(pred, target)
    ss_tot = float(np.sum((target - target.mean()) ** 2))
    if ss_tot == 0.0:
        raise DegenerateError("target has zero variance, R^2 is undefined")
    ss_res = float(np.sum((target - pred) ** 2))
    return 1.0 - ss_res / ss_tot


def psnr(a, b, max_val: float = 1.0) -> float:
    """10 log10(max_val^2 / mse) in dB; +inf sentinel for identical inputs."""
    err = mse(a, b)
    if err == 0.0:
        return math.inf
    return 10.0 * math.log10(max_val * max_val / err)


def _gaussian_kernel(radius: int, sigma: float) -> np.ndarray:
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return k / k.sum()


def _windowed_mean(img: np.ndarray, kernel: np.ndarray, radius: int) -> np.ndarray:
    out = correlate1d(img, kernel, axis=0, mode="constant")
    out = correlate1d(out, kernel, axis=1, mode="constant")
    return out[radius:-radius, radius:-radius]


def _ssim_single(a: np.ndarray, b: np.ndarray, data_range: float) -> float:
    radius = SSIM_WINDOW // 2
    if min(a.shape) < SSIM_WINDOW:
        raise DomainError(
            f"image sides {a.shape} are smaller than the {SSIM_WINDOW}px SSIM window"
        )
    kernel = _gaussian_kernel(radius, SSIM_SIGMA)
    c1 = (0.01 * data_range) ** 2
    c2 = (0.03 * data_range) ** 2
    mu_a = _windowed_mean(a, kernel, radius)
    mu_b = _windowed_mean(b, kernel, radius)
    var_a = _windowed_mean(a * a, kernel, radius) - mu_a * mu_a
    var_b = _windowed_mean(b * b, kernel, radius) - mu_b * mu_b
    cov = _windowed_mean(a * b, kernel, radius) - mu_a * mu_b
    num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def ssim(a, b, data_range: float = 1.0) -> float:
    """Mean local SSIM; multichannel (C, H, W) input averages over channels."""
    a, b = _pair(a, b)
    if a.ndim == 2:
        return _ssim_single(a, b, data_range)
    if a.ndim == 3:
        return float(np.mean([
            _ssim_single(a[c], b[c], data_range) for c in range(a.shape[0])
        ]))
    raise ShapeError(f"ssim expects (H, W) or (C, H, W), got {a.shape}")


# --- report assembly -----------------------------------------------------------


@dataclass
class MetricRecord:
    name: str
    mse: float
    r2: float
    psnr_db: float
    ssim: float


@dataclass
class MetricReport:
    records: dict[str, MetricRecord]
    steps: int
    schedule: str
    seed: int

    def row(self) -> dict:
        return {
            "schedule": self.schedule,
            "steps": self.steps,
            "seed": self.seed,
            "MSE_latent": self.records["latent"].mse,
            "R2_latent": self.records["latent"].r2,
            "RGB_SSIM": self.records["rgb"].ssim,
            "RGB_PSNR": self.records["rgb"].psnr_db,
            "NDVI_SSIM": self.records["ndvi"].ssim,
            "NDWI_SSIM": self.records["ndwi"].ssim,
        }


DEFAULT_TARGETS = ("latent", "rgb", "ndvi", "ndwi")


def _target_arrays(res: TranslationResult, name: str) -> np.ndarray:
    if name == "latent":
        return res.latent.data
    if name == "rgb":
        return res.rgb.data
    if name == "ndvi":
        return res.ndvi
    if name == "ndwi":
        return res.ndwi
    raise DomainError(f"unknown metric target {name!r}")


def report(results: list[TranslationResult], ground_truth: list[TranslationResult],
           targets=DEFAULT_TARGETS, *, steps: int = 0, schedule: str = "",
           seed: int = 0) -> MetricReport:
    """Per-target metrics averaged over the evaluation set."""
    if not results or len(results) != len(ground_truth):
        raise PairingError(
            f"{len(results)} results cannot be paired with {len(ground_truth)} truths"
        )
    for res, truth in zip(results, ground_truth):
        if res.chip_id != truth.chip_id:
            raise PairingError(f"result {res.chip_id!r} paired with truth {truth.chip_id!r}")

    records = {}
    for name in targets:
        per_chip = {"mse": [], "r2": [], "psnr": [], "ssim": []}
        for res, truth in zip(results, ground_truth):
            pred = _target_arrays(res, name)
            ref = _target_arrays(truth, name)
            per_chip["mse"].append(mse(pred, ref))
            per_chip["r2"].append(r2(pred, ref))
            per_chip["psnr"].append(psnr(pred, ref))
            per_chip["ssim"].append(ssim(pred, ref))
        records[name] = MetricRecord(
            name=name,
            mse=float(np.mean(per_chip["mse"])),
            r2=float(np.mean(per_chip["r2"])),
            psnr_db=float(np.mean(per_chip["psnr"])),
            ssim=float(np.mean(per_chip["ssim"])),
        )
    return MetricReport(records=records, steps=steps, schedule=schedule, seed=seed)


def write_report_csv(path: str | Path, reports: list[MetricReport]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=REPORT_COLUMNS)
        writer.writeheader()
        for rep in reports:
            writer.writerow({k: repr(v) if isinstance(v, float) else v
                             for k, v in rep.row().items()})


def write_report_json(path: str | Path, reports: list[MetricReport]) -> None:
    rows = [rep.row() for rep in reports]
    Path(path).write_text(json.dumps(rows, indent=2) + "\n")
