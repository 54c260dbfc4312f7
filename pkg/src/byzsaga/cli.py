"""Command line entry point: `byzsaga {run,verify,constants,curve}`."""

from __future__ import annotations

import argparse
import json
import logging
import sys

import numpy as np

from . import theorycheck
from .experiment import ConfigError, _json_safe, load_config, run_experiment


def _float_list(text: str):
    """Comma list ("0.1,0.2") or inclusive range "start:stop:step"."""
    if text.count(":") == 2:
        start, stop, step = (float(v) for v in text.split(":"))
        if step <= 0:
            raise argparse.ArgumentTypeError("grid step must be > 0")
        n = int(np.floor((stop - start) / step + 1e-9)) + 1
        return [round(start + i * step, 12) for i in range(n)]
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number list: {text!r}") from None


def _int_list(text: str):
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer list: {text!r}") from None


def _dump(obj):
    print(json.dumps(_json_safe(obj), indent=2, sort_keys=True))


def cmd_run(args) -> int:
    config = load_config(args.config)
    if args.output:
        config.output = args.output
    manifest = run_experiment(config)
    diverged = sum(r["diverged"] for r in manifest["runs"])
    print(f"wrote {len(manifest['runs'])} metrics files and manifest.json to {config.output}"
          + (f" ({diverged} diverged)" if diverged else ""))
    return 0


def cmd_verify(args) -> int:
    reports = theorycheck.default_suite(args.trials, args.seed)
    _dump({"passed": all(r.passed for r in reports), "checks": [r.as_dict() for r in reports]})
    return 0 if all(r.passed for r in reports) else 1


def cmd_constants(args) -> int:
    c = theorycheck.constants(args.W, args.B, args.s)
    out = {"constants": c.as_dict()}
    if args.mu is not None and args.L is not None:
        rep = theorycheck.bounds(c, args.mu, args.L, args.J, args.W - args.B,
                                 args.delta_sq, args.sigma_sq, args.epsilon)
        out["bounds"] = rep.as_dict()
    _dump(out)
    return 0


def cmd_curve(args) -> int:
    rows = theorycheck.error_curve(args.W, args.s_list, args.grid)
    print("s,alpha,coefficient")
    for s, a, coef in rows:
        print(f"{s},{a!r},{coef!r}")
    for s in args.s_list:
        if s > 1:
            a = theorycheck.crossover(args.W, s, args.grid)
            print(f"# crossover s={s}: {'none on grid' if a is None else repr(a)}", file=sys.stderr)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="byzsaga", description="Byzantine-robust federated learning simulator")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run an experiment config")
    r.add_argument("config")
    r.add_argument("--output", help="override the config's output directory")
    r.set_defaults(func=cmd_run)

    v = sub.add_parser("verify", help="Monte-Carlo checks of the concentration results")
    v.add_argument("--trials", type=int, default=100_000)
    v.add_argument("--seed", type=int, default=0)
    v.set_defaults(func=cmd_verify)

    c = sub.add_parser("constants", help="robustness constants and learning-error bounds")
    c.add_argument("--W", type=int, required=True)
    c.add_argument("--B", type=int, required=True)
    c.add_argument("--s", type=int, default=2)
    c.add_argument("--mu", type=float)
    c.add_argument("--L", type=float)
    c.add_argument("--J", type=int, default=1)
    c.add_argument("--delta-sq", type=float, default=1.0)
    c.add_argument("--sigma-sq", type=float, default=0.0)
    c.add_argument("--epsilon", type=float, default=0.0)
    c.set_defaults(func=cmd_constants)

    cu = sub.add_parser("curve", help="error coefficient versus Byzantine fraction")
    cu.add_argument("--W", type=int, required=True)
    cu.add_argument("--s-list", type=_int_list, default=[1, 2, 3])
    cu.add_argument("--grid", type=_float_list, default=_float_list("0:0.49:0.01"))
    cu.set_defaults(func=cmd_curve)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
