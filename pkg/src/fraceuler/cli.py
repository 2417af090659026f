"""Command-line entry point.

Exit codes: 0 success, 1 execution error, 2 usage or config error,
3 a tolerance or invariant check was not met.
"""

import argparse
import os
import sys

from .constants import constants_csv, limit_constants
from .errors import ConfigError, FracEulerError, ToleranceNotMetError

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_USAGE = 2
EXIT_TOLERANCE = 3


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def resolve_cli_threads(value):
    if value is not None:
        return value
    env = os.environ.get("FRACEULER_THREADS")
    if env is None or env == "":
        return None
    try:
        v = int(env)
    except ValueError:
        raise ConfigError(f"FRACEULER_THREADS must be a positive integer, got {env!r}") from None
    if v < 1:
        raise ConfigError(f"FRACEULER_THREADS must be a positive integer, got {env!r}")
    return v


def build_parser():
    p = argparse.ArgumentParser(prog="fraceuler", description="Euler schemes for fBm-driven SDEs")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run an experiment from a config file")
    r.add_argument("config")
    r.add_argument("--out", default=None, help="output directory (overrides output_dir)")
    r.add_argument("--seed", type=int, default=None, help="master seed (overrides master_seed)")
    r.add_argument("--threads", type=_positive_int, default=None,
                   help="worker threads; falls back to FRACEULER_THREADS")

    c = sub.add_parser("constants", help="print the normalized limit constants as CSV")
    c.add_argument("--h", type=float, required=True)
    c.add_argument("--t", type=float, default=1.0)
    c.add_argument("--P", type=_positive_int, default=512)
    c.add_argument("--tolerance", type=float, default=1e-4)
    return p


def _cmd_run(args):
    from .harness import load_config, run_experiment, with_overrides, write_outputs

    cfg = load_config(args.config)
    cfg = with_overrides(cfg, master_seed=args.seed, output_dir=args.out)
    threads = resolve_cli_threads(args.threads)
    table, plot = run_experiment(cfg, threads=threads)
    for path in write_outputs(cfg, table, plot):
        print(path)
    failed = [k for k, ok in table.checks.items() if not ok]
    if failed:
        print(f"checks not met: {', '.join(failed)}", file=sys.stderr)
        return EXIT_TOLERANCE
    return EXIT_OK


def _cmd_constants(args):
    if not 0.5 < args.h < 1.0:
        raise ConfigError(f"h out of (0.5,1): {args.h}")
    if args.t <= 0:
        raise ConfigError("t must be > 0")
    res = limit_constants(args.h, args.t, args.P, args.tolerance)
    sys.stdout.write(constants_csv([res]))
    return EXIT_OK


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.command == "run":
            return _cmd_run(args)
        return _cmd_constants(args)
    except ToleranceNotMetError as exc:
        print(f"fraceuler: tolerance not met: {exc}", file=sys.stderr)
        return EXIT_TOLERANCE
    except ConfigError as exc:
        print(f"fraceuler: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FracEulerError, OSError, ValueError, ArithmeticError) as exc:
        print(f"fraceuler: error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
