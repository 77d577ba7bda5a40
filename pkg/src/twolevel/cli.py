"""Command-line interface.

    twolevel simulate   --config cfg.yaml [--seed N] [--out DIR] [--threads N]
    twolevel solve      --config cfg.yaml ...
    twolevel equilibrium --config cfg.yaml ...
    twolevel analyze    --config cfg.yaml ...
    twolevel compare    --config cfg.yaml ...

Exit codes: 0 success, 2 config error, 3 numerical failure.  The default
output root is $TWOLEVEL_OUT (or ./runs).
"""

import argparse
import sys

from .config import load_config
from .errors import ConfigError, NumericalError
from .runner import run_experiment


def build_parser():
    ap = argparse.ArgumentParser(prog="twolevel",
                                 description="two-level birth-death-mutation-competition simulator")
    sub = ap.add_subparsers(dest="command", required=True)
    for cmd in ("simulate", "solve", "equilibrium", "analyze", "compare"):
        p = sub.add_parser(cmd)
        p.add_argument("--config", required=True, help="YAML experiment config")
        p.add_argument("--seed", type=int, default=None, help="override config seed")
        p.add_argument("--out", default=None, help="artifact directory")
        p.add_argument("--threads", type=int, default=None, help="worker threads")
        p.add_argument("--no-figures", action="store_true",
                       help="skip PNG rendering (CSV is the contract either way)")
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        cfg["kind"] = args.command
        out = run_experiment(cfg, out_dir=args.out, seed=args.seed,
                             threads=args.threads,
                             figures=False if args.no_figures else None)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except NumericalError as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return 3
    print(out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
