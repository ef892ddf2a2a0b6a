"""Mesh and matrix serialization.

Formats:

- mesh text format: a header comment, the node count followed by one ``x y``
  line per node, then the cell count followed by one
  ``m v0 v1 ... v_{m-1}`` loop per cell (counterclockwise).  Lines starting
  with ``#`` are comments.
- VTU: ASCII XML unstructured grid with polygon cells, for paraview.
- COO text: ``rows cols nnz`` header plus one ``i j value`` triplet per line.
"""

from __future__ import annotations

import hashlib
import io
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .halfedge import MeshError, PolygonMesh, build_from_cells

MESH_HEADER = "# polyscft mesh format v1"


def mesh_to_text(mesh: PolygonMesh) -> str:
    buf = io.StringIO()
    buf.write(MESH_HEADER + "\n")
    buf.write(f"{mesh.n_nodes}\n")
    for x, y in mesh.xy:
        buf.write(f"{float(x)!r} {float(y)!r}\n")
    buf.write(f"{mesh.n_cells}\n")
    for c in range(mesh.n_cells):
        verts = mesh.cell_vertices(c)
        buf.write(str(len(verts)) + " " + " ".join(map(str, verts)) + "\n")
    return buf.getvalue()


def mesh_from_text(text: str) -> PolygonMesh:
    tokens: list[str] = []
    for line in text.splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            tokens.extend(line.split())
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(tokens):
            raise MeshError("truncated mesh file")
        out = tokens[pos:pos + n]
        pos += n
        return out

    n_nodes = int(take(1)[0])
    coords = np.array([float(t) for t in take(2 * n_nodes)]).reshape(-1, 2)
    n_cells = int(take(1)[0])
    cells = []
    for _ in range(n_cells):
        m = int(take(1)[0])
        cells.append([int(t) for t in take(m)])
    if pos != len(tokens):
        raise MeshError("trailing data in mesh file")
    return build_from_cells(coords, cells)


def write_mesh(path, mesh: PolygonMesh) -> None:
    Path(path).write_text(mesh_to_text(mesh))


def read_mesh(path) -> PolygonMesh:
    return mesh_from_text(Path(path).read_text())


def mesh_hash(mesh: PolygonMesh) -> str:
    """SHA-256 of the canonical text serialization."""
    return hashlib.sha256(mesh_to_text(mesh).encode()).hexdigest()


# ---------------------------------------------------------------------------
# VTU
# ---------------------------------------------------------------------------

def write_vtu(path, mesh: PolygonMesh, point_data: dict | None = None,
              cell_data: dict | None = None) -> None:
    """Write the mesh and per-node / per-cell scalar fields as ASCII VTU."""
    point_data = point_data or {}
    cell_data = cell_data or {}
    n_pts = mesh.n_nodes
    n_cells = mesh.n_cells
    conn: list[int] = []
    offsets: list[int] = []
    for c in range(n_cells):
        conn.extend(int(v) for v in mesh.cell_vertices(c))
        offsets.append(len(conn))

    def fmt(arr, per_line=6):
        arr = np.asarray(arr).ravel()
        lines = []
        for i in range(0, len(arr), per_line):
            chunk = arr[i:i + per_line]
            if np.issubdtype(chunk.dtype, np.integer):
                lines.append(" ".join(str(int(v)) for v in chunk))
            else:
                lines.append(" ".join(f"{float(v):.16e}" for v in chunk))
        return "\n".join(lines)

    parts = ['<?xml version="1.0"?>',
             '<VTKFile type="UnstructuredGrid" version="0.1" '
             'byte_order="LittleEndian">',
             '<UnstructuredGrid>',
             f'<Piece NumberOfPoints="{n_pts}" NumberOfCells="{n_cells}">']
    if point_data:
        parts.append('<PointData Scalars="%s">' % next(iter(point_data)))
        for name, arr in point_data.items():
            arr = np.asarray(arr, dtype=float)
            if arr.shape != (n_pts,):
                raise ValueError(f"point data {name!r} has shape {arr.shape}")
            parts.append(f'<DataArray type="Float64" Name="{name}" '
                         'format="ascii">')
            parts.append(fmt(arr))
            parts.append('</DataArray>')
        parts.append('</PointData>')
    if cell_data:
        parts.append('<CellData Scalars="%s">' % next(iter(cell_data)))
        for name, arr in cell_data.items():
            arr = np.asarray(arr)
            if arr.shape != (n_cells,):
                raise ValueError(f"cell data {name!r} has shape {arr.shape}")
            typ = "Int64" if np.issubdtype(arr.dtype, np.integer) \
                else "Float64"
            parts.append(f'<DataArray type="{typ}" Name="{name}" '
                         'format="ascii">')
            parts.append(fmt(arr))
            parts.append('</DataArray>')
        parts.append('</CellData>')
    xyz = np.column_stack([mesh.xy, np.zeros(n_pts)])
    parts += ['<Points>',
              '<DataArray type="Float64" NumberOfComponents="3" '
              'format="ascii">', fmt(xyz, per_line=3), '</DataArray>',
              '</Points>', '<Cells>',
              '<DataArray type="Int64" Name="connectivity" format="ascii">',
              fmt(np.array(conn)), '</DataArray>',
              '<DataArray type="Int64" Name="offsets" format="ascii">',
              fmt(np.array(offsets)), '</DataArray>',
              '<DataArray type="UInt8" Name="types" format="ascii">',
              fmt(np.full(n_cells, 7, dtype=np.int64)), '</DataArray>',
              '</Cells>', '</Piece>', '</UnstructuredGrid>', '</VTKFile>']
    Path(path).write_text("\n".join(parts) + "\n")


# ---------------------------------------------------------------------------
# sparse matrix text export
# ---------------------------------------------------------------------------

def write_coo(path, matrix) -> None:
    """Dump a sparse matrix as ``rows cols nnz`` plus ``i j value`` lines."""
    m = sp.coo_matrix(matrix)
    with open(path, "w") as fh:
        fh.write(f"{m.shape[0]} {m.shape[1]} {m.nnz}\n")
        for i, j, v in zip(m.row, m.col, m.data):
            fh.write(f"{int(i)} {int(j)} {float(v)!r}\n")


def read_coo(path) -> sp.coo_matrix:
    with open(path) as fh:
        rows, cols, nnz = (int(t) for t in fh.readline().split())
        i = np.empty(nnz, dtype=np.int64)
        j = np.empty(nnz, dtype=np.int64)
        v = np.empty(nnz)
        for n in range(nnz):
            a, b, c = fh.readline().split()
            i[n], j[n], v[n] = int(a), int(b), float(c)
    return sp.coo_matrix((v, (i, j)), shape=(rows, cols))
