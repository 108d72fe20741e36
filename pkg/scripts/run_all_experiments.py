#!/usr/bin/env python3
"""Run the full desk-scale experiment battery into one output directory.

Usage:
    python scripts/run_all_experiments.py --out out --seed 1 [--scale desk|paper]

Each experiment writes <out>/<name>/data.csv and manifest.json; the figure
renderer in frontend/ consumes those directories directly.
"""

import argparse
import sys
import time

from sepunmix.experiments import EXPERIMENT_NAMES, ExperimentConfig, run_experiment


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="out")
    parser.add_argument("--seed", type=int, default=1)
    parser.add_argument("--scale", choices=["desk", "paper"], default="desk")
    parser.add_argument(
        "--only", nargs="*", default=None, help=f"subset of {EXPERIMENT_NAMES}"
    )
    args = parser.parse_args()

    names = args.only if args.only else EXPERIMENT_NAMES
    failures = []
    for name in names:
        config = ExperimentConfig(
            experiment=name,
            seed=args.seed,
            out_dir=args.out,
            scale=args.scale,
            snr_db=(0.0 if name.startswith("basin") else None),
        )
        start = time.time()
        try:
            out_dir = run_experiment(config)
            print(f"{name:20s} wrote {out_dir}  ({time.time() - start:.1f}s)")
        except Exception as exc:  # keep going; report at the end
            failures.append((name, exc))
            print(f"{name:20s} FAILED: {exc}")
    if failures:
        return 2 if any("invariant" in str(e).lower() for _, e in failures) else 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
