#!/usr/bin/env python3
"""Fit the potential-only variants on every desk-scale ground-truth potential.

Writes lightspeed.csv / lightspeed.json (one row per potential x variant:
transport error, per-epoch cost, coupling vs training time) into --out.
"""

import argparse
import logging

from jkoflow.experiments import run_lightspeed


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--epochs", type=int, default=1000)
    parser.add_argument("--full", action="store_true", help="every potential, not the desk four")
    parser.add_argument("--jobs", type=int, default=1)
    parser.add_argument("--out", default="results/lightspeed")
    args = parser.parse_args()

    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    rows = run_lightspeed(
        seed=args.seed, epochs=args.epochs, out_dir=args.out, full=args.full, jobs=args.jobs
    )
    for row in rows:
        if "error" in row:
            print(f"{row['cell']}: FAILED ({row['error']})")
        else:
            print(
                f"{row['potential']:>16} {row['variant']:<22} "
                f"emd {row['mean_emd']:.4g} +- {row['std_emd']:.2g}  "
                f"train {row['train_time']:.1f}s couple {row['couple_time']:.2f}s"
            )


if __name__ == "__main__":
    main()
