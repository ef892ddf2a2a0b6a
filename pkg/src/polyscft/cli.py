"""Command-line entry point.

``polyscft run <config>`` executes one experiment described by an
INI-style config file; flags override the ``[run]`` section.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from contextlib import nullcontext
from pathlib import Path

from .config import ConfigError, RunConfig
from .experiments import MorphologyReport, run_experiment
from .scft import ScftDivergence

log = logging.getLogger(__name__)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="polyscft",
        description="Polymer field solver on polygonal meshes.")
    sub = parser.add_subparsers(dest="command", required=True)
    runp = sub.add_parser("run", help="execute an experiment config file")
    runp.add_argument("config", help="path to the INI-style run config")
    runp.add_argument("--output-dir", default=None,
                      help="override [run] output_dir")
    runp.add_argument("--seed", type=int, default=None,
                      help="override [run] seed")
    runp.add_argument("--threads", type=int, default=None,
                      help="cap linear-algebra worker threads")
    runp.add_argument("--serial", action="store_true",
                      help="force single-threaded execution "
                           "(bitwise-reproducible runs)")
    runp.add_argument("--resume", default=None, metavar="SNAPSHOT",
                      help="seed initial fields from a restart snapshot")
    runp.add_argument("-v", "--verbose", action="store_true",
                      help="debug-level logging")
    return parser


def _thread_limiter(cfg: RunConfig):
    limit = 1 if cfg.run.serial else (cfg.run.threads or 0)
    if limit <= 0:
        return nullcontext()
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:  # pragma: no cover - always present in CI
        log.warning("threadpoolctl unavailable; thread cap ignored")
        return nullcontext()
    return threadpool_limits(limits=limit)


def _print_report(report):
    print(f"{report.experiment}: finished in {report.elapsed:.1f} s")
    for key, val in sorted(report.values.items()):
        if isinstance(val, MorphologyReport):
            print(f"  {key}: {val.label} "
                  f"(components={val.n_significant}, "
                  f"max elongation={val.max_elongation:.2f})")
        elif isinstance(val, float):
            print(f"  {key}: {val:.6g}")
        elif isinstance(val, list) and val and isinstance(val[0], float):
            print(f"  {key}: " + " ".join(f"{v:.4e}" for v in val))
        elif isinstance(val, dict):
            inner = ", ".join(f"{k:g}: {v:.6f}" for k, v in val.items())
            print(f"  {key}: {inner}")
        else:
            print(f"  {key}: {val}")
    for art in report.artifacts:
        print(f"  wrote {art}")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        cfg = RunConfig.from_file(args.config)
        overrides = {}
        if args.output_dir is not None:
            overrides["output_dir"] = args.output_dir
        if args.seed is not None:
            overrides["seed"] = args.seed
        if args.threads is not None:
            overrides["threads"] = args.threads
        if args.serial:
            overrides["serial"] = True
        if overrides:
            cfg = cfg.replace(**overrides)
        if args.resume is not None:
            snap = Path(args.resume)
            if not snap.is_file():
                raise ConfigError(f"snapshot not found: {snap}")
            cfg = dataclasses.replace(
                cfg, scft=dataclasses.replace(
                    cfg.scft, init="file", init_file=str(snap.resolve())))
        with _thread_limiter(cfg):
            report = run_experiment(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except ScftDivergence as exc:
        print(f"run diverged: {exc}", file=sys.stderr)
        return 3
    _print_report(report)
    return 0


if __name__ == "__main__":
    sys.exit(main())
