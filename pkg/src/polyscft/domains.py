"""Polygonal meshes for non-rectangular domains.

Shapes are described as shapely geometries; :func:`clip_mesh` overlays a
uniform background grid and keeps the polygonal intersections as cells,
so boundary cells become general polygons while the interior stays a
regular quad grid.  The bundled demo domains (flower, curved-L, ring,
rabbit, dumbbell) are produced this way by ``scripts/make_domain_meshes.py``.
"""

from __future__ import annotations

import numpy as np
import shapely
import shapely.affinity as affinity
from shapely.geometry import Point, Polygon, box
from shapely.geometry.polygon import orient

from .halfedge import MeshError, PolygonMesh, build_from_cells

#: decimal places used to merge clipped vertices shared by neighbors
SNAP_DECIMALS = 9

#: boundary pieces smaller than this fraction of a grid cell are dropped
MIN_AREA_FRACTION = 1.0e-4


def _cell_loops(piece: Polygon) -> list[np.ndarray]:
    """CCW vertex loops of one clipped piece (holes are not supported
    at the single-cell level; the background grid is always finer than
    any domain feature)."""
    piece = orient(piece, sign=1.0)
    if piece.interiors:
        raise MeshError("clip produced a cell with a hole; "
                        "use a finer background grid")
    coords = np.asarray(piece.exterior.coords[:-1], dtype=float)
    # drop repeated points introduced by snapping
    keep = np.ones(len(coords), dtype=bool)
    for i in range(len(coords)):
        if np.allclose(coords[i], coords[(i + 1) % len(coords)],
                       atol=10.0 ** (-SNAP_DECIMALS)):
            keep[i] = False
    return [coords[keep]]


def clip_mesh(shape: Polygon, cell_size: float) -> PolygonMesh:
    """Mesh ``shape`` with a uniform grid clipped to its boundary."""
    if not shape.is_valid or shape.is_empty:
        raise MeshError("invalid or empty domain shape")
    x0, y0, x1, y1 = shape.bounds
    nx = max(1, int(np.ceil((x1 - x0) / cell_size)))
    ny = max(1, int(np.ceil((y1 - y0) / cell_size)))
    min_area = MIN_AREA_FRACTION * cell_size * cell_size
    loops: list[np.ndarray] = []
    from shapely.prepared import prep
    prepared = prep(shape)
    for i in range(nx):
        for j in range(ny):
            cell = box(x0 + i * cell_size, y0 + j * cell_size,
                       x0 + (i + 1) * cell_size, y0 + (j + 1) * cell_size)
            if not prepared.intersects(cell):
                continue
            if prepared.contains_properly(cell):
                pieces = [cell]
            else:
                clipped = shape.intersection(cell)
                if clipped.is_empty:
                    continue
                pieces = (list(clipped.geoms)
                          if clipped.geom_type.startswith("Multi")
                          else [clipped])
            for piece in pieces:
                if piece.geom_type != "Polygon" or piece.area < min_area:
                    continue
                loops.extend(_cell_loops(piece))
    if not loops:
        raise MeshError("shape produced no cells at this resolution")
    # snap and merge shared vertices across cells
    index: dict[tuple[float, float], int] = {}
    points: list[tuple[float, float]] = []
    cells: list[list[int]] = []
    for loop in loops:
        snapped = np.round(loop, SNAP_DECIMALS)
        ids = []
        for x, y in snapped:
            key = (float(x), float(y))
            if key not in index:
                index[key] = len(points)
                points.append(key)
            ident = index[key]
            if not ids or ids[-1] != ident:
                ids.append(ident)
        if len(ids) > 1 and ids[0] == ids[-1]:
            ids.pop()
        if len(ids) >= 3:
            cells.append(ids)
    return build_from_cells(np.asarray(points), cells)


# ---------------------------------------------------------------------------
# demo domain shapes (sized in chain-gyration-radius units)
# ---------------------------------------------------------------------------

def flower_shape(r0: float = 4.5, amp: float = 1.2, petals: int = 5,
                 n: int = 720) -> Polygon:
    theta = np.linspace(0.0, 2.0 * np.pi, n, endpoint=False)
    r = r0 + amp * np.cos(petals * theta)
    pts = np.column_stack([r * np.cos(theta), r * np.sin(theta)])
    return Polygon(pts + (r0 + amp))


def curved_l_shape(side: float = 12.0, radius: float = 7.5) -> Polygon:
    square = box(0.0, 0.0, side, side)
    bite = Point(side, side).buffer(radius, quad_segs=64)
    return square.difference(bite)


def ring_shape(r_out: float = 6.0, r_in: float = 3.0) -> Polygon:
    center = Point(r_out, r_out)
    return center.buffer(r_out, quad_segs=128).difference(
        center.buffer(r_in, quad_segs=128))


def rabbit_shape() -> Polygon:
    head = Point(6.0, 4.6).buffer(3.6, quad_segs=64)
    cheeks = affinity.scale(Point(6.0, 3.4).buffer(3.0, quad_segs=64),
                            1.35, 0.85)
    ear_l = affinity.rotate(
        affinity.scale(Point(4.4, 9.2).buffer(1.9, quad_segs=64), 0.62, 1.9),
        18.0)
    ear_r = affinity.rotate(
        affinity.scale(Point(7.6, 9.2).buffer(1.9, quad_segs=64), 0.62, 1.9),
        -18.0)
    return shapely.unary_union([head, cheeks, ear_l, ear_r]).simplify(1e-3)


def dumbbell_shape(r: float = 3.4, gap: float = 4.8,
                   neck: float = 1.9) -> Polygon:
    cx = r + 0.2
    left = Point(cx, r + 0.2).buffer(r, quad_segs=64)
    right = Point(cx + gap + r, r + 0.2).buffer(r, quad_segs=64)
    bar = box(cx, r + 0.2 - 0.5 * neck, cx + gap + r, r + 0.2 + 0.5 * neck)
    return shapely.unary_union([left, right, bar]).simplify(1e-3)


DOMAIN_SHAPES = {
    "flower": flower_shape,
    "curved_l": curved_l_shape,
    "ring": ring_shape,
    "rabbit": rabbit_shape,
    "dumbbell": dumbbell_shape,
}
