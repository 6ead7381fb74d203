#!/usr/bin/env python3
"""Transport error of the network potential fit across dimension and particle count."""

import argparse
import logging

from jkoflow.experiments import run_scaling


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--potential", default="styblinski_tang")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--epochs", type=int, default=1000)
    parser.add_argument("--full", action="store_true", help="large grid: d up to 50, N up to 10000")
    parser.add_argument("--jobs", type=int, default=1)
    parser.add_argument("--out", default="results/scaling")
    args = parser.parse_args()

    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    rows = run_scaling(
        potential=args.potential, seed=args.seed, epochs=args.epochs,
        out_dir=args.out, full=args.full, jobs=args.jobs,
    )
    for row in rows:
        if "error" in row:
            print(f"{row['cell']}: FAILED ({row['error']})")
        else:
            print(
                f"d={row['dim']:<3} N={row['n_particles']:<6} "
                f"emd {row['mean_emd']:.4g} ({row['seconds']:.1f}s)"
            )


if __name__ == "__main__":
    main()
