"""Command-line surface: one binary, flag-configured subcommands.

Exit codes: 0 success, 1 usage or input error, 2 validation/property failure
(gradient check over tolerance, theorem violations). Every run echoes its
fully resolved configuration before producing output.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import dmapio
from .likelihood import verify_theorem
from .loss import loss_gradient, pml_loss, total_loss
from .metrics import BenchmarkConfig, ablation_run, evaluate, run_benchmark_cell
from .pyramid import DensityMap, build_pyramid, maps_from_batch, rasterize
from .rng import SplitMix64


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _echo(name: str, args: argparse.Namespace) -> None:
    pairs = sorted((k, v) for k, v in vars(args).items() if k != "func")
    print(f"# pml {name} " + " ".join(f"{k}={v}" for k, v in pairs))


def _levels_list(text: str) -> list[int]:
    try:
        return [int(p) for p in text.split(",") if p != ""]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _cmd_rasterize(args) -> int:
    _echo("rasterize", args)
    ann = dmapio.read_points_csv(args.points, args.scene_size)
    m = rasterize(ann, args.level)
    dmapio.write_dmap(args.out, m)
    print(f"wrote {args.out}: level {m.level}, total {m.total():.17g}")
    return 0


def _cmd_pyramid(args) -> int:
    _echo("pyramid", args)
    m = dmapio.read_dmap(args.map)
    pyr = build_pyramid(m, args.levels)
    outdir = Path(args.out_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    for level_map in pyr:
        path = outdir / f"level_{level_map.level}.dmap"
        dmapio.write_dmap(path, level_map)
        print(f"level {level_map.level}: total {level_map.total():.17g} -> {path}")
    return 0


def _cmd_loss(args) -> int:
    _echo("loss", args)
    preds = dmapio.read_dmap_batch(args.pred)
    gts = [g.require_nonnegative() for g in dmapio.read_dmap_batch(args.gt)]
    if args.no_reg:
        bd = pml_loss(preds, gts, args.n, args.eps)
    else:
        bd = total_loss(preds, gts, args.n, args.eps)
    flat = bd.to_flat_dict()
    if args.json:
        print(json.dumps(flat, sort_keys=True))
    else:
        for k in flat:
            print(f"{k} = {flat[k]:.17g}")
    return 0


def _fd_gradient(preds, gts, n, eps, step):
    grads = []
    for b, p in enumerate(preds):
        data = p.data.copy()
        g = np.zeros_like(data)
        scale = max(1.0, float(np.max(np.abs(data))))
        h = step * scale
        for idx in np.ndindex(data.shape):
            orig = data[idx]
            data[idx] = orig + h
            hi = total_loss(_swap(preds, b, data), gts, n, eps).total
            data[idx] = orig - h
            lo = total_loss(_swap(preds, b, data), gts, n, eps).total
            data[idx] = orig
            g[idx] = (hi - lo) / (2.0 * h)
        grads.append(g)
    return grads


def _swap(preds, b, data):
    out = list(preds)
    out[b] = DensityMap(preds[b].level, data)
    return out


def _cmd_grad_check(args) -> int:
    _echo("grad-check", args)
    side = 1 << args.level
    rng = SplitMix64(args.seed)
    batch = 2
    preds = maps_from_batch(rng.uniform_block(batch * side * side).reshape(batch, side, side), args.level)
    gts = maps_from_batch(rng.uniform_block(batch * side * side).reshape(batch, side, side), args.level)
    analytic = loss_gradient(preds, gts, args.n, args.eps)
    numeric = _fd_gradient(preds, gts, args.n, args.eps, step=1e-6)
    num_scale = max(float(np.max(np.abs(g))) for g in numeric)
    err = max(float(np.max(np.abs(a.data - g))) for a, g in zip(analytic, numeric)) / num_scale
    print(f"max relative error: {err:.6e} (tolerance {args.tol:g})")
    if err > args.tol:
        print("grad-check: FAIL", file=sys.stderr)
        return 2
    print("grad-check: OK")
    return 0


def _cmd_verify_theorem(args) -> int:
    _echo("verify-theorem", args)
    report = verify_theorem(args.trials, args.seed, args.level, args.nk)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(report.to_csv())
        print(f"wrote {args.out}")
    print(f"violations: {report.violations}")
    return 2 if report.violations else 0


def _cmd_train_demo(args) -> int:
    _echo("train-demo", args)
    cfg = BenchmarkConfig(steps=args.steps, lr=args.lr, clip_norm=args.clip, n=args.n)
    run = run_benchmark_cell(cfg, args.seed, args.loss, with_regularizer=True)
    with open(args.out, "w") as fh:
        fh.write(run.result.trace_csv())
    first = run.result.rows[0].loss
    last = run.result.rows[-1].loss
    print(f"wrote {args.out}")
    print(f"loss: first {first:.17g} last {last:.17g}")
    print(f"test MAE {run.metrics.mae:.17g} MSE {run.metrics.mse:.17g}")
    return 0


def _cmd_ablate(args) -> int:
    _echo("ablate", args)
    cfg = BenchmarkConfig(steps=args.steps)
    table = ablation_run(args.seed, args.n_values, repeats=args.repeats, cfg=cfg)
    with open(args.out, "w") as fh:
        fh.write(table.to_csv())
    print(f"wrote {args.out}")
    print(f"{'cell':<14} {'mean MAE':>12} {'std MAE':>12}")
    for cell, (mean, std) in table.summary().items():
        print(f"{cell:<14} {mean:>12.4f} {std:>12.4f}")
    return 0


def _cmd_eval(args) -> int:
    _echo("eval", args)
    preds = dmapio.read_dmap_batch(args.pred_dir)
    gts = [g.require_nonnegative() for g in dmapio.read_dmap_batch(args.gt_dir)]
    summary = evaluate(preds, gts)
    print(f"samples: {len(summary.per_sample)}")
    print(f"MAE = {summary.mae:.17g}")
    print(f"MSE = {summary.mse:.17g}")
    return 0


def _build_parser() -> _Parser:
    parser = _Parser(prog="pml", description=__doc__)
    parser.add_argument("--threads", type=int, default=1,
                        help="cap on worker parallelism (runs are currently single-threaded)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("rasterize", help="count a point CSV into a density map")
    p.add_argument("--points", required=True)
    p.add_argument("--scene-size", type=float, required=True)
    p.add_argument("--level", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_rasterize)

    p = sub.add_parser("pyramid", help="write sum-downsamples of a map at given levels")
    p.add_argument("--map", required=True)
    p.add_argument("--levels", type=_levels_list, required=True)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=_cmd_pyramid)

    p = sub.add_parser("loss", help="evaluate the loss between predictions and ground truth")
    p.add_argument("--pred", required=True, help=".dmap file or directory of them")
    p.add_argument("--gt", required=True)
    p.add_argument("--n", type=int, default=4)
    p.add_argument("--no-reg", action="store_true", help="drop the full-resolution L2 term")
    p.add_argument("--eps", type=float, default=1e-12)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=_cmd_loss)

    p = sub.add_parser("grad-check", help="compare analytic and finite-difference gradients")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--level", type=int, required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--tol", type=float, default=1e-5)
    p.add_argument("--eps", type=float, default=1e-12)
    p.set_defaults(func=_cmd_grad_check)

    p = sub.add_parser("verify-theorem", help="randomized sparse-vs-dense likelihood comparison")
    p.add_argument("--trials", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--level", type=int, required=True)
    p.add_argument("--nk", type=int, required=True)
    p.add_argument("--out", default=None, help="write the per-trial CSV here")
    p.set_defaults(func=_cmd_verify_theorem)

    p = sub.add_parser("train-demo", help="train the synthetic benchmark once")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--steps", type=int, required=True)
    p.add_argument("--loss", choices=("pml", "l2"), required=True)
    p.add_argument("--n", type=int, default=4)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--clip", type=float, default=10.0)
    p.add_argument("--out", required=True, help="metrics trace CSV")
    p.set_defaults(func=_cmd_train_demo)

    p = sub.add_parser("ablate", help="sweep n and the regularizer flag")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--n-values", type=_levels_list, default=[0, 1, 2, 3, 4, 5])
    p.add_argument("--repeats", type=int, default=1)
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_ablate)

    p = sub.add_parser("eval", help="counting MAE/MSE between two map directories")
    p.add_argument("--pred-dir", required=True)
    p.add_argument("--gt-dir", required=True)
    p.set_defaults(func=_cmd_eval)

    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (dmapio.ParseError, FileNotFoundError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
