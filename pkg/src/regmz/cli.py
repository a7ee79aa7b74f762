"""Command-line driver: ``regmz generate | learn | predict | evaluate | reproduce``.

Exit codes: 0 success, 1 prediction divergence (partial results are
kept), 2 invalid configuration or mismatched artifacts.
"""

import os

# MZ_THREADS caps BLAS parallelism; it must be set before numpy loads
_threads = os.environ.get("MZ_THREADS")
if _threads:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS", "NUMBA_NUM_THREADS"):
        os.environ[_var] = _threads

import argparse
import logging
import sys
from pathlib import Path

from . import __version__
from .presets import (
    PRESETS,
    SCALES,
    ConfigError,
    HashMismatch,
    cmd_evaluate,
    cmd_generate,
    cmd_learn,
    cmd_predict,
    cmd_reproduce,
    load_toml,
    read_config,
    resolve_config,
)

log = logging.getLogger("regmz")


def _common(p, out_required=True):
    p.add_argument("--config", type=Path, help="TOML file overriding preset defaults")
    p.add_argument("--scale", choices=SCALES, help="desk (reduced sizes) or paper")
    p.add_argument("--seed", type=int, help="base seed")
    p.add_argument("--out", type=Path, required=out_required, help="output directory")
    p.add_argument("--force", action="store_true", help="ignore config hash mismatches")


def build_parser():
    ap = argparse.ArgumentParser(prog="regmz", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"regmz {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="simulate train/test trajectories")
    p.add_argument("--preset", choices=PRESETS)
    p.add_argument("--tag", help="also write the observable matrices of this model tag")
    _common(p)

    p = sub.add_parser("learn", help="extract Mori-Zwanzig operators")
    p.add_argument("--data", type=Path, required=True, help="directory written by generate")
    p.add_argument("--tag", required=True, help="model tag, e.g. mori5, spline, cnn")
    p.add_argument("--H", type=int, dest="H", help="number of operators (default from config)")
    _common(p)

    p = sub.add_parser("predict", help="roll out a learned model from test histories")
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--mode", choices=["linear_with_memory", "nonlinear_with_memory", "markov"],
                   help="override the tag's prediction mode")
    p.add_argument("--markov-only", action="store_true", help="use only the Markov operator")
    _common(p)

    p = sub.add_parser("evaluate", help="score predictions against the test data")
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--pred", type=Path, required=True)
    _common(p)

    p = sub.add_parser("reproduce", help="run generate, learn, predict and evaluate for a preset")
    p.add_argument("preset", choices=PRESETS)
    p.add_argument("--tags", nargs="+", help="subset of model tags")
    _common(p)
    return ap


def _config(args, data_dir=None):
    user = load_toml(args.config) if args.config else None
    preset = getattr(args, "preset", None)
    if user is None and preset is None and data_dir is not None:
        user = read_config(data_dir)
    return resolve_config(user, preset=preset, scale=args.scale, seed=args.seed)


def run(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    cmd = args.command
    if cmd == "generate":
        cfg = _config(args)
        for f in cmd_generate(cfg, args.out, tag=args.tag):
            log.info("wrote %s", f)
        return 0
    if cmd == "learn":
        cfg = _config(args, args.data)
        progress = (lambda n, op: log.info("order %d fit mse %.3e", n, op.fit_mse)) if args.verbose else None
        cmd_learn(cfg, args.data, args.tag, args.out, H=args.H, progress=progress)
        return 0
    if cmd == "predict":
        cfg = _config(args, args.data)
        mode = "markov" if args.markov_only else args.mode
        n_div = cmd_predict(cfg, args.model, args.data, args.out, mode=mode, force=args.force)
        if n_div:
            print(f"regmz: {n_div} rollout(s) diverged; partial results written to {args.out}",
                  file=sys.stderr)
            return 1
        return 0
    if cmd == "evaluate":
        cfg = _config(args, args.data)
        rep = cmd_evaluate(cfg, args.model, args.data, args.pred, args.out, force=args.force)
        return 1 if rep.config.get("diverged") else 0
    cfg = _config(args)
    n_div = cmd_reproduce(cfg, args.out, tags=args.tags,
                          progress=(lambda msg: log.info(msg)) if args.verbose else None)
    if n_div:
        print(f"regmz: {n_div} rollout(s) diverged; partial results kept", file=sys.stderr)
        return 1
    return 0


def main(argv=None):
    try:
        return run(argv)
    except (ConfigError, HashMismatch, FileNotFoundError) as e:
        print(f"regmz: error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
