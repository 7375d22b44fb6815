#!/usr/bin/env python3
"""Desk-scale learning benchmark: train on the synthetic set, score at T=100.

Reproduces the headline check: a trained model must beat the best per-pixel
affine map (least-squares fit on the training split) in latent MSE and clear
0.5 SSIM on RGB/NDVI/NDWI against oracle targets.

Usage: python scripts/run_benchmark.py [--out DIR] [--epochs N] [--seed S]
"""

import argparse
import dataclasses
import sys
import time
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parent))
from lstsq_baseline import latent_split, least_squares_pixel_map, apply_pixel_map

from flowtrans import pipeline
from flowtrans.pipeline import DataSection, RunConfig


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="bench_out")
    parser.add_argument("--epochs", type=int, default=40)
    parser.add_argument("--scenes", type=int, default=200)
    parser.add_argument("--size", type=int, default=64)
    parser.add_argument("--seed", type=int, default=123)
    parser.add_argument("--steps", type=int, default=100)
    args = parser.parse_args()

    out = Path(args.out)
    cfg = RunConfig(seed=args.seed,
                    data=DataSection(scenes=args.scenes, size=args.size))
    cfg = dataclasses.replace(
        cfg, train=dataclasses.replace(cfg.train, epochs=args.epochs))

    run_dir = out / "run_cosine"
    started = time.perf_counter()
    pipeline.train_run(cfg, run_dir)
    train_s = time.perf_counter() - started
    print(f"trained {args.epochs} epochs in {train_s:.1f}s")

    results = pipeline.infer_run(run_dir, steps=args.steps)
    rep = pipeline.eval_run(results)
    row = rep.row()
    print("metrics:", {k: round(v, 6) if isinstance(v, float) else v
                       for k, v in row.items()})

    z1_train, z2_train = latent_split(run_dir, "train")
    z1_test, z2_test = latent_split(run_dir, "test")
    a, b = least_squares_pixel_map(z1_train, z2_train)
    baseline = float(np.mean((apply_pixel_map(a, b, z1_test) - z2_test) ** 2))
    print(f"linear-baseline latent MSE: {baseline:.6f} "
          f"(model: {row['MSE_latent']:.6f}, "
          f"ratio {baseline / row['MSE_latent']:.1f}x)")

    ok = (row["RGB_SSIM"] >= 0.5 and row["NDVI_SSIM"] >= 0.5
          and row["NDWI_SSIM"] >= 0.5 and row["MSE_latent"] < baseline
          and train_s < 900)
    print("benchmark:", "PASS" if ok else "FAIL")
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
