"""`plot` command: render figures from one or more run directories.

    plot --run DIR [--run DIR2 ...] --kind convergence|evolution|pdist --out FILE
"""

from __future__ import annotations

import argparse
import sys

import matplotlib

matplotlib.use("Agg")

from .artifacts import ArtifactError, load_run
from .plots import KINDS, plot_run


def make_parser():
    parser = argparse.ArgumentParser(prog="plot",
                                     description="render figures from run outputs")
    parser.add_argument("--run", action="append", required=True, dest="runs",
                        help="run directory (repeatable; overlaid for convergence)")
    parser.add_argument("--kind", choices=KINDS, required=True)
    parser.add_argument("--out", required=True, help="output image (.svg or .png)")
    parser.add_argument("--metric", default="err_energy",
                        help="convergence column to plot (default err_energy)")
    parser.add_argument("--iteration", type=int, default=None,
                        help="iteration for pdist (default: last dumped)")
    return parser


def main(argv=None):
    args = make_parser().parse_args(argv)
    try:
        runs = [load_run(d) for d in args.runs]
        path = plot_run(runs, args.kind, args.out, metric=args.metric,
                        iteration=args.iteration)
    except ArtifactError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    print(f"wrote {path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
