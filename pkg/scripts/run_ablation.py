#!/usr/bin/env python3
"""Sweep the number of measured sub-resolutions n, with and without the
full-resolution regularizer, on identical scene streams."""

import argparse

from pml.metrics import BenchmarkConfig, ablation_run


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--n-values", default="0,1,2,3,4,5")
    ap.add_argument("--repeats", type=int, default=1)
    ap.add_argument("--steps", type=int, default=2000)
    ap.add_argument("--out", default="ablation.csv")
    args = ap.parse_args()

    cfg = BenchmarkConfig(steps=args.steps)
    n_values = [int(v) for v in args.n_values.split(",")]
    table = ablation_run(args.seed, n_values, repeats=args.repeats, cfg=cfg)

    with open(args.out, "w") as fh:
        fh.write(table.to_csv())
    print(f"wrote {args.out}")
    print(f"{'cell':<14} {'mean MAE':>10} {'std MAE':>10}")
    for cell, (mean, std) in table.summary().items():
        print(f"{cell:<14} {mean:>10.3f} {std:>10.3f}")


if __name__ == "__main__":
    main()
