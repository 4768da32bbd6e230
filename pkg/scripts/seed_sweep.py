"""Repeat the experiment over several master seeds and tabulate medians.

Usage: python3 scripts/seed_sweep.py [--seeds 0 1 2 ...] [--config cfg.json]
"""
from __future__ import annotations

import argparse
import json
from pathlib import Path

import numpy as np

from shm_locate.pipeline import ARMS, ExperimentConfig, run_experiment


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, nargs="+", default=list(range(10)))
    ap.add_argument("--config", type=Path)
    ap.add_argument("--json", type=Path, help="also dump per-seed rows here")
    args = ap.parse_args()

    config = (ExperimentConfig.from_dict(json.loads(args.config.read_text()))
              if args.config else ExperimentConfig())
    rows = []
    for seed in args.seeds:
        rep = run_experiment(config, seed)
        row = {"seed": seed, "composite": rep.composite_split_accuracy,
               "monolithic_small": rep.monolithic_small_accuracy,
               **{arm: rep.arms[arm].confusion.accuracy for arm in ARMS},
               "transfer_val10": rep.arms["transfer_small"].history.val_loss[9],
               "scratch_val10": rep.arms["scratch_small"].history.val_loss[9]}
        rows.append(row)
        print(" ".join(f"{k}={v:.4f}" if isinstance(v, float) else f"{k}={v}"
                       for k, v in row.items()), flush=True)

    print("\nmedian over", len(rows), "seeds")
    for key in rows[0]:
        if key != "seed":
            print(f"  {key:<18} {np.median([r[key] for r in rows]):.4f}")
    if args.json:
        args.json.write_text(json.dumps(rows, indent=2))


if __name__ == "__main__":
    main()
