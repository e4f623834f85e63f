"""Command line front end.

Three subcommands:

  run     one optimizer on one task across seeds; writes curve + summary files
  sweep   grid search declared in a JSON config file
  binadd  sustainable-prediction protocol on the binary addition task

Exit codes: 0 success, 1 configuration/usage error, 2 runtime or
numerical failure. Worker-pool size comes from the LSTMKF_WORKERS
environment variable (default: all logical processors).
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .harness import (
    BinaryAdditionOutcome,
    ExperimentConfig,
    OptimizerSpec,
    SweepConfig,
    TaskSpec,
    emit_outputs,
    grid_sweep,
    run_binary_addition,
    run_experiment,
)
from .linalg import NotPositiveDefiniteError

OPTIMIZERS = ("sgd", "rmsprop", "adam", "ekf", "dekf", "alg1", "alg2")


class _Parser(argparse.ArgumentParser):
    """argparse exits with code 2 on bad usage; this project reserves 2
    for numerical failures, so usage errors exit 1 instead."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _add_optimizer_args(p: argparse.ArgumentParser):
    p.add_argument("--optimizer", required=True, choices=OPTIMIZERS)
    p.add_argument("--lr", type=float, default=None, help="first-order learning rate")
    p.add_argument("--p0", type=float, default=None, help="initial covariance scale")
    p.add_argument("--r-start", type=float, default=None)
    p.add_argument("--r-end", type=float, default=None)
    p.add_argument("--q-start", type=float, default=None)
    p.add_argument("--q-end", type=float, default=None)
    p.add_argument("--zeta-bar", type=float, default=None,
                   help="fixed gate threshold (alg1 only)")
    p.add_argument("--zeta-min", type=float, default=0.01,
                   help="smallest mixture gate threshold (alg2)")
    p.add_argument("--r-floor", type=float, default=None,
                   help="adaptive measurement-noise clamp (alg1/alg2)")
    p.add_argument("--tbptt", type=int, default=10, help="truncation depth")


def _optimizer_spec(args) -> OptimizerSpec:
    return OptimizerSpec(
        kind=args.optimizer,
        lr=args.lr,
        p0=args.p0,
        r_start=args.r_start,
        r_end=args.r_end,
        q_start=args.q_start,
        q_end=args.q_end,
        zeta_bar=args.zeta_bar,
        zeta_min=args.zeta_min,
        r_floor=args.r_floor,
    )


def _task_spec(args) -> TaskSpec:
    task = args.task
    if task.startswith("file:"):
        return TaskSpec(
            kind="file",
            length=args.steps,
            path=task[len("file:"):],
            delimiter=args.delimiter,
            target_columns=tuple(int(c) for c in args.target_cols.split(",")),
            has_header=args.has_header,
        )
    if task == "teacher":
        return TaskSpec(
            kind="teacher",
            length=args.steps,
            teacher_n_s=args.teacher_hidden,
            teacher_seed=args.teacher_seed,
            input_seed=args.input_seed,
            noise_std=args.noise_std,
            teacher_std=args.teacher_std,
            n_x=args.inputs,
        )
    if task == "binadd":
        return TaskSpec(
            kind="binadd",
            length=args.steps,
            n_terms=args.n,
            stream_seed=args.stream_seed,
        )
    raise ValueError(f"unknown task {task!r} (use file:<path>, teacher, or binadd)")


def _cmd_run(args) -> int:
    seeds = [int(s) for s in args.seeds.split(",") if s]
    config = ExperimentConfig(
        task=_task_spec(args),
        optimizer=_optimizer_spec(args),
        n_s=args.hidden,
        steps=args.steps,
        tbptt=args.tbptt,
        seeds=seeds,
        k=None if args.k == 0 else args.k,
    )
    report = run_experiment(config)
    paths = emit_outputs(report, args.out)
    print(f"task={config.task.kind} optimizer={config.optimizer.kind} "
          f"seeds={len(seeds)} steps={config.steps}")
    print(f"median NSE: {report.nse_median:.6g}  "
          f"(band {report.band.lo:.6g} .. {report.band.hi:.6g})")
    if report.knse_median is not None:
        print(f"median kNSE (k={config.k}): {report.knse_median:.6g}")
    print(f"median wall-clock per run: {float(np.median(report.wall_clock)):.3f} s")
    if any(report.diverged):
        bad = [s for s, dv in zip(seeds, report.diverged) if dv]
        print(f"diverged seeds: {bad}")
    for p in paths:
        print(f"wrote {p}")
    return 0


def _cmd_sweep(args) -> int:
    with open(args.config, "r", encoding="utf-8") as fh:
        sweep = SweepConfig.from_json(fh.read())
    results = grid_sweep(sweep)
    os.makedirs(args.out, exist_ok=True)
    out_path = os.path.join(args.out, "sweep_results.json")
    with open(out_path, "w", encoding="utf-8") as fh:
        json.dump(results, fh, indent=2, sort_keys=True)
        fh.write("\n")
    for kind, res in results.items():
        print(f"{kind}: best {res['best']}")
    print(f"wrote {out_path}")
    return 0


def _format_outcome(o: BinaryAdditionOutcome) -> str:
    status = "Failed" if o.failed else str(o.sustained_at)
    return (f"stream {o.stream_seed}: sustained at {status} "
            f"({o.symbols_run} symbols, {o.elapsed:.1f} s)")


def _cmd_binadd(args) -> int:
    spec = _optimizer_spec(args)
    outcomes = run_binary_addition(
        spec,
        n_terms=args.n,
        n_s=args.hidden,
        stream_seeds=list(range(1, args.streams + 1)),
        tbptt=args.tbptt,
        window=args.window,
        limit=args.limit,
    )
    for o in outcomes:
        print(_format_outcome(o))
    reached = [o.sustained_at for o in outcomes if not o.failed]
    if reached:
        print(f"median sustained timestep: {float(np.median(reached)):.0f} "
              f"({len(reached)}/{len(outcomes)} streams)")
    else:
        print("no stream reached sustainable prediction")
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        out_path = os.path.join(args.out, f"binadd_{spec.kind}_n{args.n}.json")
        payload = [
            {
                "stream_seed": o.stream_seed,
                "sustained_at": o.sustained_at,
                "symbols_run": o.symbols_run,
                "elapsed_seconds": o.elapsed,
                "updates": o.updates,
            }
            for o in outcomes
        ]
        with open(out_path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")
        print(f"wrote {out_path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="lstmkf", description=__doc__,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True,
                                parser_class=_Parser)

    run_p = sub.add_parser("run",
                           help="run one optimizer on one task across seeds")
    run_p.add_argument("--task", required=True,
                       help="file:<path> | teacher | binadd")
    _add_optimizer_args(run_p)
    run_p.add_argument("--hidden", type=int, default=16, help="learner n_s")
    run_p.add_argument("--steps", type=int, default=2500)
    run_p.add_argument("--seeds", default=",".join(str(s) for s in range(1, 21)),
                       help="comma-separated seed list")
    run_p.add_argument("--k", type=int, default=50,
                       help="k-step forecast horizon (0 disables)")
    run_p.add_argument("--out", default="results")
    run_p.add_argument("--delimiter", default=None,
                       help="file cell separator (default: any whitespace)")
    run_p.add_argument("--target-cols", default="-1",
                       help="comma-separated 0-based target column indices")
    run_p.add_argument("--has-header", action="store_true")
    run_p.add_argument("--teacher-hidden", type=int, default=4)
    run_p.add_argument("--teacher-seed", type=int, default=7)
    run_p.add_argument("--input-seed", type=int, default=11)
    run_p.add_argument("--noise-std", type=float, default=0.05)
    run_p.add_argument("--teacher-std", type=float, default=0.5,
                       help="teacher weight scale")
    run_p.add_argument("--inputs", type=int, default=9,
                       help="teacher input width incl. bias")
    run_p.add_argument("--n", type=int, default=3,
                       help="summand count for --task binadd")
    run_p.add_argument("--stream-seed", type=int, default=1)
    run_p.set_defaults(func=_cmd_run)

    sweep_p = sub.add_parser("sweep",
                             help="hyperparameter grid search from a JSON config")
    sweep_p.add_argument("--config", required=True)
    sweep_p.add_argument("--out", default="results")
    sweep_p.set_defaults(func=_cmd_sweep)

    bin_p = sub.add_parser("binadd",
                           help="binary-addition sustainable-prediction protocol")
    bin_p.add_argument("--n", type=int, required=True, choices=(2, 3, 4, 5),
                       help="number of summand sequences")
    bin_p.add_argument("--streams", type=int, default=5)
    _add_optimizer_args(bin_p)
    bin_p.add_argument("--hidden", type=int, default=12)
    bin_p.add_argument("--window", type=int, default=500)
    bin_p.add_argument("--limit", type=int, default=100_000)
    bin_p.add_argument("--out", default=None)
    bin_p.set_defaults(func=_cmd_binadd)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (NotPositiveDefiniteError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2
    except (ValueError, KeyError, TypeError, OSError, json.JSONDecodeError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
