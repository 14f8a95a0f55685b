"""Command line interface: ``gptraj {simulate,propagate,compare,kernel-check}``.

Exit codes: 0 success, 2 configuration error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import logging
import sys

import numpy as np

from . import io
from .config import MOMENT_METHODS, parse_config
from .errors import (ConfigInvalid, DegenerateSpectrumError, InsufficientSamplesError,
                     UnsupportedMethodError)
from .experiment import build_model, file_stem, kernel_check, load_inputs, run_experiment, run_method

log = logging.getLogger("gptraj")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


def _seed(text):
    try:
        val = int(text, 10)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a decimal integer: {text!r}") from None
    if not 0 <= val < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return val


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gptraj", description="Trajectory simulation and "
                                     "uncertainty propagation for Gaussian process dynamics.")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "simulate": "sample trajectories with one method and write them as CSV",
        "propagate": "run moment propagation methods and write moment CSVs",
        "compare": "run all configured methods and write the comparison report",
        "kernel-check": "PSD and basis-reconstruction diagnostics for the configured kernel",
    }
    for name, text in helps.items():
        p = sub.add_parser(name, help=text, description=text)
        p.add_argument("--config", help="INI configuration file")
        p.add_argument("--preset", help="named preset, e.g. fig2-1a (a --config file overrides it)")
        p.add_argument("--seed", type=_seed, help="override run.seed")
        p.add_argument("--out", help="override output.dir")
        if name in ("simulate", "propagate"):
            p.add_argument("--method", help="method to run (default: from the config)")
    return parser


def _cmd_simulate(cfg, args):
    sampling = [m for m in cfg.methods if m not in MOMENT_METHODS]
    method = args.method or (sampling[0] if sampling else "ground_truth")
    if method in MOMENT_METHODS:
        raise UnsupportedMethodError(f"{method} is a moment method; use propagate")
    res = run_method(cfg, build_model(cfg), method, load_inputs(cfg))
    path = cfg.out_dir / f"{file_stem(method)}_trajectories.csv"
    io.write_trajectory_csv(path, res.batch)
    log.info("wrote %s (%.2fs)", path, res.runtime)


def _cmd_propagate(cfg, args):
    methods = [args.method] if args.method else [m for m in cfg.methods if m in MOMENT_METHODS]
    if not methods:
        methods = ["linearized"]
    model, inputs = build_model(cfg), load_inputs(cfg)
    for method in methods:
        if method not in MOMENT_METHODS:
            raise UnsupportedMethodError(f"{method} is not a moment method; use simulate")
        res = run_method(cfg, model, method, inputs)
        path = cfg.out_dir / f"{method}_moments.csv"
        io.write_moment_csv(path, res.moments)
        if res.moments.cov is not None:
            io.write_matrix_csv(cfg.out_dir / f"{method}_trajectory_cov.csv", res.moments.cov)
        log.info("wrote %s (%.2fs)", path, res.runtime)


def _cmd_compare(cfg, args):
    report = run_experiment(cfg)
    for name in report.results:
        log.info("%-14s max rel. variance deviation %.4g, terminal ratio %s", name,
                 report.max_rel_var_deviation[name],
                 np.array2string(np.atleast_1d(report.terminal_var_ratio[name]), precision=4))
    log.info("report written to %s", cfg.out_dir)


def _cmd_kernel_check(cfg, args):
    rows = kernel_check(cfg)
    text = "quantity,value\n" + "".join(
        f"{k},{v}\n" if isinstance(v, (int, np.integer)) else f"{k},{io.FLOAT_FMT % v}\n"
        for k, v in rows)
    io.atomic_write_text(cfg.out_dir / "kernel_check.csv", text)
    sys.stdout.write(text)


COMMANDS = {"simulate": _cmd_simulate, "propagate": _cmd_propagate, "compare": _cmd_compare,
            "kernel-check": _cmd_kernel_check}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = parse_config(args.config, preset=args.preset, seed=args.seed, out=args.out)
        COMMANDS[args.command](cfg, args)
    except (ConfigInvalid, UnsupportedMethodError) as exc:
        log.error("configuration error: %s", exc)
        return EXIT_CONFIG
    except (np.linalg.LinAlgError, FloatingPointError, DegenerateSpectrumError,
            InsufficientSamplesError) as exc:
        log.error("numeric failure: %s", exc)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
