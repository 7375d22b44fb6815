#!/usr/bin/env python3
"""Schedule comparison harness: three schedules, two step counts, one CSV.

Trains one model per interpolation schedule (cosine, exponential k=2, linear)
on a shared synthetic dataset, then scores each at T=100 and T=1000. Output
is a Table-shaped CSV with one row per (schedule, steps).

Usage: python scripts/run_schedule_comparison.py [--out DIR] [--epochs N]
"""

import argparse
import sys
from pathlib import Path

from flowtrans import data as data_mod
from flowtrans.pipeline import (DataSection, RunConfig, compare_schedules)
import dataclasses


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="comparison_out")
    parser.add_argument("--epochs", type=int, default=20)
    parser.add_argument("--scenes", type=int, default=200)
    parser.add_argument("--size", type=int, default=64)
    parser.add_argument("--seed", type=int, default=123)
    args = parser.parse_args()

    out = Path(args.out)
    data_dir = out / "data"
    if not (data_dir / "manifest.json").exists():
        data_mod.generate_dataset(data_dir, seed=args.seed, scenes=args.scenes,
                                  size=args.size)

    cfg = RunConfig(seed=args.seed, data=DataSection(dir=str(data_dir)))
    cfg = dataclasses.replace(
        cfg, train=dataclasses.replace(cfg.train, epochs=args.epochs))

    reports = compare_schedules(cfg, out, steps_list=(100, 1000))
    print(f"wrote {out / 'schedule_comparison.csv'}")
    for rep in reports:
        row = rep.row()
        print("  " + ", ".join(
            f"{k}={round(v, 5) if isinstance(v, float) else v}"
            for k, v in row.items() if k != "seed"))
    return 0


if __name__ == "__main__":
    sys.exit(main())
