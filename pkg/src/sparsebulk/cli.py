"""Command-line runner: ``sparsebulk <subcommand> --config run.yaml [--seed S] [--threads T] [--out DIR]``.

Exit codes: 0 ok, 2 config error, 3 numeric error.  Each run writes
``<name>.csv``, ``<name>.json`` and ``<name>_report.txt`` into the output directory;
a failed run leaves ``<name>_error.json`` next to whatever was written.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
import traceback
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .experiments import RUNNERS, describe, list_experiments, run_sample
from .parallel import THREADS_ENV

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


def _json_default(x):
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, np.bool_):
        return bool(x)
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, complex):
        return [x.real, x.imag]
    raise TypeError(f"not JSON serialisable: {type(x).__name__}")


def _dump(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True, default=_json_default) + "\n")


def resolve_threads(flag: int | None, cfg: cfgmod.ExperimentConfig) -> int:
    """--threads, then the config, then the environment variable, then the core count."""
    if flag is not None:
        return max(1, flag)
    if cfg.sampling.threads is not None:
        return cfg.sampling.threads
    env = os.environ.get(THREADS_ENV)
    if env:
        return max(1, int(env))
    return max(1, os.cpu_count() or 1)


def run(cfg: cfgmod.ExperimentConfig, name: str | None = None, runner=None) -> int:
    """Run one configured experiment and write its artifacts; returns the exit status."""
    name = name or cfg.experiment
    runner = runner or RUNNERS[cfg.experiment]
    out = Path(cfg.output.dir)
    out.mkdir(parents=True, exist_ok=True)
    head = {"experiment": name, "config_hash": cfg.config_hash, "seed": cfg.seed,
            "threads": cfg.sampling.threads, "config": cfg.as_dict()}
    start = time.perf_counter()
    try:
        art = runner(cfg)
    except (ArithmeticError, RuntimeError, ValueError, np.linalg.LinAlgError) as err:
        _dump(out / f"{name}_error.json", {**head, "status": "numeric_error",
                                           "error_type": type(err).__name__, "message": str(err),
                                           "traceback": traceback.format_exc()})
        print(f"numeric error in {name}: {type(err).__name__}: {err}", file=sys.stderr)
        return EXIT_NUMERIC
    elapsed = time.perf_counter() - start
    with open(out / f"{name}.csv", "w", newline="") as fh:
        fh.write(art.csv)
    _dump(out / f"{name}.json", {**head, "status": "ok", "elapsed_s": elapsed,
                                 "results": {"config_hash": cfg.config_hash, **art.summary}})
    (out / f"{name}_report.txt").write_text(
        art.report + f"config {cfg.config_hash}, seed {cfg.seed}, {elapsed:.1f} s\n")
    print(art.report, end="")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sparsebulk", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("sample",) + tuple(RUNNERS):
        p = sub.add_parser(name, help=f"run the {name} experiment" if name != "sample"
                           else "sample the configured ensemble and store eigenvalues")
        p.add_argument("--config", required=True, help="YAML experiment config")
        p.add_argument("--seed", type=int, help="override sampling.seed")
        p.add_argument("--threads", type=int, help=f"worker processes (fallback ${THREADS_ENV})")
        p.add_argument("--out", help="output directory (overrides output.dir)")
        if name == "stats":
            p.add_argument("--k", type=int, help="correlation order (1 or 2)")
            p.add_argument("--t", type=float, help="Gaussian component variance")
            p.add_argument("--z", type=str, help="bulk point, e.g. 0.3+0.1j")
            p.add_argument("--samples", type=int, help="number of matrices")
    d = sub.add_parser("describe", help="list experiments or describe one")
    d.add_argument("name", nargs="?")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "describe":
        if args.name is None:
            for name in list_experiments():
                print(name)
            return EXIT_OK
        try:
            print(describe(args.name))
        except KeyError as err:
            print(err.args[0], file=sys.stderr)
            return EXIT_CONFIG
        return EXIT_OK
    try:
        cfg = cfgmod.load(args.config)
        extra = {}
        if args.command == "stats":
            extra = {"k": args.k, "t": args.t, "samples": args.samples,
                     "z": None if args.z is None else cfgmod.parse_complex(args.z)}
        cfg = cfg.with_overrides(seed=args.seed, out=args.out, **extra)
        cfg = cfg.with_overrides(threads=resolve_threads(args.threads, cfg))
        if args.command != "sample":
            if cfg.experiment != args.command:
                raise cfgmod.ConfigError(f"config describes experiment {cfg.experiment!r}, "
                                         f"not {args.command!r}", cfg.lines.get("experiment"), args.config)
            cfgmod.validate(cfg, args.config)
    except cfgmod.ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, ValueError) as err:
        print(f"config error: {args.config}: {err}", file=sys.stderr)
        return EXIT_CONFIG
    if args.command == "sample":
        return run(cfg, name="sample", runner=run_sample)
    return run(cfg)


if __name__ == "__main__":
    sys.exit(main())
