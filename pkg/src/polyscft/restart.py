"""Binary snapshot container for exact run restarts.

Layout::

    9 bytes   magic  b"PSCFTSNAP"
    8 bytes   little-endian uint64: JSON header length in bytes
    header    JSON (ascii): version, k, n_dofs, mesh hash, array table,
              free-form metadata
    payload   the DOF arrays, float64 little-endian, in table order
    trailer   the mesh as canonical text

The mesh travels inside the file so a restart never depends on an
external mesh file staying unchanged; the header's hash is re-checked
against the embedded text on load.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .halfedge import PolygonMesh
from .meshio import mesh_from_text, mesh_hash, mesh_to_text

MAGIC = b"PSCFTSNAP"
VERSION = 1


class SnapshotError(RuntimeError):
    """Raised for malformed or inconsistent snapshot files."""


def save_snapshot(path, mesh: PolygonMesh, k: int,
                  arrays: dict[str, np.ndarray],
                  meta: dict | None = None) -> None:
    """Write DOF ``arrays`` plus the mesh and ``meta`` to ``path``."""
    mesh_text = mesh_to_text(mesh).encode()
    table = []
    payload = bytearray()
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(np.asarray(arr, dtype="<f8"))
        table.append({"name": str(name), "offset": len(payload),
                      "size": int(arr.size)})
        payload.extend(arr.tobytes())
    header = {
        "version": VERSION,
        "k": int(k),
        "n_dofs": int(next(iter(arrays.values())).size) if arrays else 0,
        "mesh_hash": mesh_hash(mesh),
        "mesh_bytes": len(mesh_text),
        "arrays": table,
        "meta": meta or {},
    }
    hdr = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(hdr)))
        fh.write(hdr)
        fh.write(bytes(payload))
        fh.write(mesh_text)


def load_snapshot(path):
    """Read a snapshot; returns ``(mesh, k, arrays, meta)``.

    Raises :class:`SnapshotError` on a bad magic, truncation, or a mesh
    hash that does not match the embedded mesh text.
    """
    blob = Path(path).read_bytes()
    if blob[:len(MAGIC)] != MAGIC:
        raise SnapshotError(f"{path}: not a snapshot file")
    pos = len(MAGIC)
    if len(blob) < pos + 8:
        raise SnapshotError(f"{path}: truncated header length")
    (hdr_len,) = struct.unpack("<Q", blob[pos:pos + 8])
    pos += 8
    try:
        header = json.loads(blob[pos:pos + hdr_len].decode())
    except ValueError as exc:
        raise SnapshotError(f"{path}: bad header: {exc}") from exc
    pos += hdr_len
    if header.get("version") != VERSION:
        raise SnapshotError(
            f"{path}: unsupported snapshot version {header.get('version')!r}")
    arrays: dict[str, np.ndarray] = {}
    payload_end = pos
    for entry in header["arrays"]:
        start = pos + entry["offset"]
        end = start + 8 * entry["size"]
        if end > len(blob):
            raise SnapshotError(f"{path}: truncated payload")
        arrays[entry["name"]] = np.frombuffer(
            blob[start:end], dtype="<f8").copy()
        payload_end = max(payload_end, end)
    mesh_text = blob[payload_end:payload_end + header["mesh_bytes"]]
    if len(mesh_text) != header["mesh_bytes"]:
        raise SnapshotError(f"{path}: truncated mesh section")
    mesh = mesh_from_text(mesh_text.decode())
    if mesh_hash(mesh) != header["mesh_hash"]:
        raise SnapshotError(f"{path}: mesh hash mismatch")
    return mesh, int(header["k"]), arrays, header.get("meta", {})
