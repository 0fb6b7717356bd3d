"""Command-line interface: run adaptation loops, re-emit reports, and run
the built-in verification battery.

Config files are flat `key = value` text; every key can be overridden with
a `--key value` flag.  Exit codes: 0 success, 2 configuration error,
3 solver failure, 4 remesh failure.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import fields

from .driver import (
    AdaptConfig,
    ConfigError,
    RemeshUnavailable,
    emit_reports,
    load_records,
    run_adaptation,
)
from .hp_model import ModelError
from .problems import ProblemError
from .solver import SolveError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3
EXIT_REMESH = 4

_CONFIG_TYPES = {
    "case": str, "epsilon": float, "alpha": float, "mode": str, "growth": float,
    "fixed_complexity": float, "max_adapt": int, "p_init": str, "p_min": int,
    "p_max": int, "delta_p": int, "remesher": str, "mesh_in": str,
    "out_dir": str, "threads": int, "seed": int, "beta_max": float,
    "condense": lambda v: v.lower() in ("1", "true", "yes"), "solver": str,
}


def parse_config_file(path):
    out = {}
    try:
        lines = open(path).read().splitlines()
    except OSError as err:
        raise ConfigError(f"cannot read config file: {err}") from None
    for i, ln in enumerate(lines):
        ln = ln.split("#", 1)[0].strip()
        if not ln:
            continue
        if "=" not in ln:
            raise ConfigError(f"{path}:{i + 1}: expected 'key = value'")
        key, val = (part.strip() for part in ln.split("=", 1))
        out[key] = val
    return out


def build_config(raw):
    kwargs = {}
    for key, val in raw.items():
        if key not in _CONFIG_TYPES:
            raise ConfigError(f"unknown config key '{key}'")
        if val is None:
            continue
        try:
            kwargs[key] = _CONFIG_TYPES[key](val)
        except ValueError:
            raise ConfigError(f"bad value for '{key}': {val!r}") from None
    return AdaptConfig(**kwargs)


def make_parser():
    parser = argparse.ArgumentParser(prog="dpghp",
                                     description="hp-adaptive DPG driver")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an adaptation loop")
    run.add_argument("--config", help="flat key=value config file")
    for key in _CONFIG_TYPES:
        run.add_argument(f"--{key}", dest=f"opt_{key}", default=None)

    rep = sub.add_parser("report", help="re-emit convergence.csv from run dumps")
    rep.add_argument("--run", dest="run_dir", required=True)
    rep.add_argument("--out", dest="out_dir", default=None)

    ver = sub.add_parser("verify", help="run the invariant battery")
    ver.add_argument("--fast", action="store_true", help="skip the slower checks")
    return parser


def cmd_run(args):
    raw = {}
    if args.config:
        raw.update(parse_config_file(args.config))
    for key in _CONFIG_TYPES:
        val = getattr(args, f"opt_{key}")
        if val is not None:
            raw[key] = val
    config = build_config(raw)
    records = run_adaptation(config)
    last = records[-1]
    print(f"finished {len(records)} records; final ndof {last.ndof:.0f}, "
          f"energy error {last.err_energy:.6e}")
    print(f"outputs in {config.out_dir}")
    return EXIT_OK


def cmd_report(args):
    records = load_records(args.run_dir)
    out_dir = args.out_dir or args.run_dir
    path = emit_reports(records, out_dir)
    print(f"wrote {path}")
    return EXIT_OK


def cmd_verify(args):
    from . import verify as verify_mod
    ok = verify_mod.run_battery(fast=args.fast)
    return EXIT_OK if ok else EXIT_SOLVER


def main(argv=None):
    args = make_parser().parse_args(argv)
    try:
        if args.command == "run":
            return cmd_run(args)
        if args.command == "report":
            return cmd_report(args)
        return cmd_verify(args)
    except (ConfigError, ProblemError) as err:
        print(f"configuration error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except RemeshUnavailable as err:
        print(f"remesh failure: {err}", file=sys.stderr)
        return EXIT_REMESH
    except (SolveError, ModelError) as err:
        print(f"solver failure: {err}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
