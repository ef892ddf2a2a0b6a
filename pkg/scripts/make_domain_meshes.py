#!/usr/bin/env python3
"""Regenerate the bundled demo domain meshes.

Writes one mesh text file per shape into src/polyscft/data/domains/.
Run from the repository root after changing shape definitions:

    python3 scripts/make_domain_meshes.py [--cell-size H]
"""
import argparse
import logging
from pathlib import Path

from polyscft.domains import DOMAIN_SHAPES, clip_mesh
from polyscft.halfedge import audit_mesh
from polyscft.meshio import write_mesh

log = logging.getLogger("make_domain_meshes")


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--cell-size", type=float, default=0.25,
                        help="background grid spacing (gyration radii)")
    parser.add_argument("--out", default=None,
                        help="output directory (default: bundled data dir)")
    args = parser.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    out = Path(args.out) if args.out else \
        Path(__file__).resolve().parent.parent / "src" / "polyscft" / \
        "data" / "domains"
    out.mkdir(parents=True, exist_ok=True)
    for name, maker in DOMAIN_SHAPES.items():
        shape = maker()
        mesh = clip_mesh(shape, args.cell_size)
        audit_mesh(mesh)
        path = out / f"{name}.txt"
        write_mesh(path, mesh)
        log.info("%-10s %6d nodes %6d cells  area %.3f -> %s", name,
                 mesh.n_nodes, mesh.n_cells, shape.area, path)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
