#!/usr/bin/env python3
"""Run a batch of experiment configs and print a one-line summary each.

Example:
    python scripts/run_experiments.py --only heat --only contour
runs two of the bundled studies; with no --only flags, every config in
the directory runs in name order.
"""
import argparse
import logging
from pathlib import Path

from polyscft.config import RunConfig
from polyscft.experiments import MorphologyReport, run_experiment


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--configs-dir", default="configs",
                    help="directory holding *.ini experiment configs")
    ap.add_argument("--output-root", default="out",
                    help="runs write to <output-root>/<config-name>")
    ap.add_argument("--only", action="append", default=[],
                    metavar="NAME", help="run just these configs "
                    "(stem names; repeatable)")
    ap.add_argument("-v", "--verbose", action="store_true")
    args = ap.parse_args(argv)

    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(asctime)s %(name)s %(message)s")

    paths = sorted(Path(args.configs_dir).glob("*.ini"))
    if args.only:
        keep = set(args.only)
        paths = [p for p in paths if p.stem in keep]
        missing = keep - {p.stem for p in paths}
        if missing:
            ap.error(f"no config named {sorted(missing)}")
    if not paths:
        ap.error(f"no configs found under {args.configs_dir}")

    for path in paths:
        cfg = RunConfig.from_file(path)
        cfg = cfg.replace(output_dir=str(Path(args.output_root) / path.stem))
        report = run_experiment(cfg)
        bits = []
        for key in ("h", "big_q", "n_nodes", "plateau"):
            if key in report.values:
                val = report.values[key]
                bits.append(f"{key}={val:.6g}" if isinstance(val, float)
                            else f"{key}={val}")
        morph = report.values.get("morphology")
        if isinstance(morph, MorphologyReport):
            bits.append(f"morphology={morph.label}")
        print(f"{path.stem}: {' '.join(bits)}  [{report.elapsed:.0f}s]")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
