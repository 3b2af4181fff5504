"""Command-line interface: run experiments, convergence curves, critical values."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import critvals, harness

_DEFAULT_BETAS = "0,0.3333333333333333,0.5,0.6666666666666666"
_DEFAULT_LEVELS = "0.01,0.025,0.05,0.1,0.5,0.9,0.95,0.975,0.99"


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fedstat",
        description="Locally updated SGD simulator with online confidence intervals",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a coverage experiment from a config file")
    run.add_argument("--config", required=True, help="flat key=value configuration file")
    run.add_argument("--threads", type=int, default=1, help="replication worker count")
    run.add_argument("--out", default=None, help="directory for report.csv and replications.csv")
    run.add_argument(
        "--dump-paths", type=int, default=0, metavar="N",
        help="dump the synchronized paths of the first N replications",
    )

    curve = sub.add_parser("curve", help="estimation error against communication rounds")
    curve.add_argument("--config", required=True)
    curve.add_argument(
        "--checkpoints", required=True,
        help="comma-separated, strictly increasing round counts",
    )
    curve.add_argument("--threads", type=int, default=1)
    curve.add_argument("--out", default=None, help="directory for curve.csv")

    cv = sub.add_parser("critvals", help="regenerate the critical-value table")
    cv.add_argument("--betas", default=_DEFAULT_BETAS)
    cv.add_argument("--levels", default=_DEFAULT_LEVELS)
    cv.add_argument("--steps", type=int, default=1000)
    cv.add_argument("--reps", type=int, default=50000)
    cv.add_argument("--seed", type=int, default=0)
    cv.add_argument("--smooth", action="store_true", help="Gaussian-kernel smoothed quantiles")
    cv.add_argument("--out", default=None, help="output CSV file (default: stdout)")
    return parser


def _cmd_run(args: argparse.Namespace) -> int:
    config = harness.load_config(args.config)
    report = harness.run_experiment(
        config, workers=args.threads, out_dir=args.out, dump_paths=args.dump_paths
    )
    sys.stdout.write(harness.report_csv(report))
    sys.stdout.write(
        f"# rounds={report.rounds} mean_error={report.mean_error:.6g} "
        f"wall_clock={report.wall_clock:.2f}s\n"
    )
    return 0


def _cmd_curve(args: argparse.Namespace) -> int:
    config = harness.load_config(args.config)
    checkpoints = [int(t) for t in args.checkpoints.split(",") if t.strip()]
    rows = harness.convergence_curve(config, checkpoints, workers=args.threads)
    text = "rounds,mean_error,se\n" + "".join(
        f"{t},{mu:.12g},{se:.12g}\n" for t, mu, se in rows
    )
    if args.out is not None:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "curve.csv").write_text(text)
    sys.stdout.write(text)
    return 0


def _cmd_critvals(args: argparse.Namespace) -> int:
    betas = [float(b) for b in args.betas.split(",") if b.strip()]
    levels = [float(p) for p in args.levels.split(",") if p.strip()]
    table = critvals.simulate_table(
        betas, levels, steps=args.steps, replications=args.reps,
        seed=args.seed, smooth=args.smooth,
    )
    if args.out is not None:
        with open(args.out, "w") as stream:
            critvals.save_csv(table, stream)
    else:
        critvals.save_csv(table, sys.stdout)
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    handlers = {"run": _cmd_run, "curve": _cmd_curve, "critvals": _cmd_critvals}
    try:
        return handlers[args.command](args)
    except (ValueError, KeyError, OSError) as exc:
        print(f"fedstat: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
