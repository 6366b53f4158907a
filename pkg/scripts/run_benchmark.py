#!/usr/bin/env python3
"""Train the synthetic benchmark with the multi-resolution loss and plain L2
on shared scene streams, and print per-seed test MAE/MSE."""

import argparse

import numpy as np

from pml.metrics import BenchmarkConfig, compare_pml_vs_l2


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", default="101,202,303", help="comma-separated base seeds")
    ap.add_argument("--steps", type=int, default=2000)
    ap.add_argument("--n", type=int, default=4)
    ap.add_argument("--out", default=None, help="optional CSV path")
    args = ap.parse_args()

    seeds = [int(s) for s in args.seeds.split(",")]
    cfg = BenchmarkConfig(steps=args.steps, n=args.n)
    rows = compare_pml_vs_l2(seeds, cfg)

    print(f"{'seed':>8} {'PML MAE':>10} {'PML MSE':>10} {'L2 MAE':>10} {'L2 MSE':>10}")
    for r in rows:
        print(f"{r['seed']:>8} {r['mae_pml']:>10.3f} {r['mse_pml']:>10.3f} "
              f"{r['mae_l2']:>10.3f} {r['mse_l2']:>10.3f}")
    print(f"{'mean':>8} {np.mean([r['mae_pml'] for r in rows]):>10.3f} "
          f"{np.mean([r['mse_pml'] for r in rows]):>10.3f} "
          f"{np.mean([r['mae_l2'] for r in rows]):>10.3f} "
          f"{np.mean([r['mse_l2'] for r in rows]):>10.3f}")

    if args.out:
        with open(args.out, "w") as fh:
            fh.write("seed,mae_pml,mse_pml,mae_l2,mse_l2\n")
            for r in rows:
                fh.write(f"{r['seed']},{r['mae_pml']:.17g},{r['mse_pml']:.17g},"
                         f"{r['mae_l2']:.17g},{r['mse_l2']:.17g}\n")
        print(f"wrote {args.out}")


if __name__ == "__main__":
    main()
