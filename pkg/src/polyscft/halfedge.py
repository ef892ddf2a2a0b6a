"""Halfedge mesh kernel for general polygonal meshes.

The mesh is stored as a halfedge complex: every undirected edge carries two
directed halfedges, interior cells are counterclockwise next-cycles, and the
domain boundary is represented by explicit halfedges whose cell id is
``EXTERIOR`` (-1).  Refinement splits a cell into one quad-like child per
vertex (edge midpoints plus a star point), so neighbouring cells simply gain
hanging vertices; they stay ordinary polygon vertices and nothing enforces a
2:1 balance.  Coarsening merges complete sibling sets back into their parent.

Mutating operations are functional: they return a new mesh plus a
:class:`MeshMap` that records, for every new cell, which old cells it came
from.  This is what field transfer between meshes consumes.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

logger = logging.getLogger("polyscft.halfedge")

EXTERIOR = -1
NO_TOKEN = -1
DEFAULT_MAX_LEVEL = 10
_COLLINEAR_TOL = 1e-10


class MeshError(Exception):
    """Raised when mesh input or connectivity is invalid."""


# ---------------------------------------------------------------------------
# polygon geometry helpers
# ---------------------------------------------------------------------------

def polygon_area(coords: np.ndarray) -> float:
    """Signed (shoelace) area of a vertex loop, positive if counterclockwise."""
    x = coords[:, 0]
    y = coords[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def polygon_centroid(coords: np.ndarray) -> np.ndarray:
    """Area centroid of a simple polygon."""
    x = coords[:, 0]
    y = coords[:, 1]
    xn = np.roll(x, -1)
    yn = np.roll(y, -1)
    cross = x * yn - xn * y
    area = 0.5 * np.sum(cross)
    if abs(area) < 1e-300:
        return coords.mean(axis=0)
    cx = np.sum((x + xn) * cross) / (6.0 * area)
    cy = np.sum((y + yn) * cross) / (6.0 * area)
    return np.array([cx, cy])


def polygon_diameter(coords: np.ndarray) -> float:
    """Largest vertex-to-vertex distance."""
    diff = coords[:, None, :] - coords[None, :, :]
    return float(np.sqrt((diff ** 2).sum(axis=2).max()))


def in_kernel(coords: np.ndarray, p: np.ndarray, rel_tol: float = 1e-9) -> bool:
    """Whether point ``p`` sees every boundary edge of the CCW polygon."""
    a = coords
    b = np.roll(coords, -1, axis=0)
    edge = b - a
    lengths = np.sqrt((edge ** 2).sum(axis=1))
    cross = edge[:, 0] * (p[1] - a[:, 1]) - edge[:, 1] * (p[0] - a[:, 0])
    scale = lengths * max(lengths.max(), 1e-300)
    return bool(np.all(cross > rel_tol * scale))


def star_point(coords: np.ndarray) -> np.ndarray:
    """A point from whose vantage the whole polygon boundary is visible.

    Tries the area centroid, the vertex mean and their midpoint in turn;
    raises ``MeshError`` if none lies in the polygon kernel.
    """
    centroid = polygon_centroid(coords)
    vmean = coords.mean(axis=0)
    for cand in (centroid, vmean, 0.5 * (centroid + vmean)):
        if in_kernel(coords, cand):
            return cand
    raise MeshError("polygon is not star shaped w.r.t. any candidate point")


def ear_clip(coords: np.ndarray) -> list[tuple[int, int, int]]:
    """Triangulate a simple CCW polygon by ear clipping.

    Returns index triples into ``coords``.  Quadratic but only used for the
    rare cell whose kernel candidates all fail.
    """
    n = len(coords)
    idx = list(range(n))
    tris: list[tuple[int, int, int]] = []
    guard = 0
    while len(idx) > 3:
        guard += 1
        if guard > 2 * n * n:
            raise MeshError("ear clipping failed; polygon may be non-simple")
        clipped = False
        m = len(idx)
        for j in range(m):
            i0, i1, i2 = idx[j - 1], idx[j], idx[(j + 1) % m]
            a, b, c = coords[i0], coords[i1], coords[i2]
            cr = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
            if cr <= 0.0:
                continue
            inside = False
            for other in idx:
                if other in (i0, i1, i2):
                    continue
                if _point_in_triangle(coords[other], a, b, c):
                    inside = True
                    break
            if not inside:
                tris.append((i0, i1, i2))
                idx.pop(j)
                clipped = True
                break
        if not clipped:
            raise MeshError("ear clipping failed; polygon may be non-simple")
    tris.append((idx[0], idx[1], idx[2]))
    return tris


def _point_in_triangle(p, a, b, c) -> bool:
    d1 = (p[0] - a[0]) * (b[1] - a[1]) - (p[1] - a[1]) * (b[0] - a[0])
    d2 = (p[0] - b[0]) * (c[1] - b[1]) - (p[1] - b[1]) * (c[0] - b[0])
    d3 = (p[0] - c[0]) * (a[1] - c[1]) - (p[1] - c[1]) * (a[0] - c[0])
    neg = (d1 < 0) or (d2 < 0) or (d3 < 0)
    pos = (d1 > 0) or (d2 > 0) or (d3 > 0)
    return not (neg and pos)


def triangulate_polygon(coords: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Split a polygon into triangles for quadrature.

    Returns ``(apex, tris)`` where each row of ``tris`` holds the three
    corner coordinates of one triangle.  When a star point exists the fan
    from it is used (apex repeated), otherwise ear clipping.
    """
    try:
        p = star_point(coords)
        nxt = np.roll(coords, -1, axis=0)
        tris = np.stack(
            [np.broadcast_to(p, coords.shape), coords, nxt], axis=1)
        return p, tris
    except MeshError:
        triples = ear_clip(coords)
        tris = np.array([[coords[i], coords[j], coords[k]]
                         for i, j, k in triples])
        return polygon_centroid(coords), tris


def _is_straight(prev_pt, pt, next_pt) -> bool:
    """True when ``pt`` lies on the segment from prev_pt to next_pt."""
    u = pt - prev_pt
    v = next_pt - pt
    lu = np.hypot(*u)
    lv = np.hypot(*v)
    if lu == 0.0 or lv == 0.0:
        return True
    cross = u[0] * v[1] - u[1] * v[0]
    dot = u[0] * v[0] + u[1] * v[1]
    return abs(cross) <= _COLLINEAR_TOL * lu * lv and dot > 0.0


# ---------------------------------------------------------------------------
# the mesh
# ---------------------------------------------------------------------------

@dataclass
class MeshMap:
    """Provenance of a mesh produced by refinement or coarsening.

    ``provenance[c]`` lists the cells of the source mesh that new cell ``c``
    derives from: a single parent for untouched or refined cells, the full
    sibling list for a merged cell.  ``node_map`` maps old node ids to new
    ones (-1 when the node was removed); refinement never removes nodes so
    there it is the identity prefix.
    """

    kind: str
    provenance: list[list[int]]
    node_map: np.ndarray
    clamped: int = 0


class PolygonMesh:
    """Polygonal mesh with full halfedge connectivity.

    Use :func:`build_from_cells` or :func:`uniform_quad_mesh` to construct
    one; the raw constructor trusts its arguments.
    """

    def __init__(self, xy, he_origin, he_twin, he_next, he_prev, he_cell,
                 cell_he, node_he, cell_level, cell_token, node_derived,
                 ancestry=None, token_next=0):
        self.xy = np.asarray(xy, dtype=float)
        self.he_origin = np.asarray(he_origin, dtype=np.int64)
        self.he_twin = np.asarray(he_twin, dtype=np.int64)
        self.he_next = np.asarray(he_next, dtype=np.int64)
        self.he_prev = np.asarray(he_prev, dtype=np.int64)
        self.he_cell = np.asarray(he_cell, dtype=np.int64)
        self.cell_he = np.asarray(cell_he, dtype=np.int64)
        self.node_he = np.asarray(node_he, dtype=np.int64)
        self.cell_level = np.asarray(cell_level, dtype=np.int64)
        self.cell_token = np.asarray(cell_token, dtype=np.int64)
        self.node_derived = np.asarray(node_derived, dtype=bool)
        # token -> (level of the parent, parent's own token, number of children)
        self.ancestry: dict[int, tuple[int, int, int]] = dict(ancestry or {})
        self.token_next = int(token_next)
        self._cell_vertex_cache: list | None = None

    # -- counts ------------------------------------------------------------

    @property
    def n_nodes(self) -> int:
        return len(self.xy)

    @property
    def n_halfedges(self) -> int:
        return len(self.he_origin)

    @property
    def n_cells(self) -> int:
        return len(self.cell_he)

    @property
    def n_edges(self) -> int:
        return self.n_halfedges // 2

    # -- traversal ---------------------------------------------------------

    def he_dest(self, h: int) -> int:
        return int(self.he_origin[self.he_twin[h]])

    def cell_halfedges(self, c: int) -> list[int]:
        """Halfedges of cell ``c`` in CCW order."""
        h0 = int(self.cell_he[c])
        out = [h0]
        h = int(self.he_next[h0])
        while h != h0:
            out.append(h)
            h = int(self.he_next[h])
            if len(out) > self.n_halfedges:
                raise MeshError(f"next-cycle of cell {c} does not close")
        return out

    def cell_vertices(self, c: int) -> np.ndarray:
        """Vertex ids of cell ``c`` in CCW order."""
        if self._cell_vertex_cache is None:
            self._cell_vertex_cache = [None] * self.n_cells
        cached = self._cell_vertex_cache[c]
        if cached is None:
            cached = self.he_origin[np.array(self.cell_halfedges(c))]
            self._cell_vertex_cache[c] = cached
        return cached

    def cell_coords(self, c: int) -> np.ndarray:
        return self.xy[self.cell_vertices(c)]

    def node_cells(self, v: int) -> list[int]:
        """Interior cells incident to node ``v``."""
        h0 = int(self.node_he[v])
        cells = []
        h = h0
        while True:
            c = int(self.he_cell[h])
            if c != EXTERIOR:
                cells.append(c)
            h = int(self.he_next[self.he_twin[h]])
            if h == h0:
                break
            if len(cells) > self.n_cells:
                raise MeshError(f"vertex orbit of node {v} does not close")
        return cells

    def boundary_halfedges(self) -> np.ndarray:
        return np.where(self.he_cell == EXTERIOR)[0]

    def boundary_nodes(self) -> np.ndarray:
        return np.unique(self.he_origin[self.he_cell == EXTERIOR])

    def boundary_loops(self) -> list[list[int]]:
        """Boundary halfedge loops (one per boundary component)."""
        remaining = set(self.boundary_halfedges().tolist())
        loops = []
        while remaining:
            h0 = min(remaining)
            loop = []
            h = h0
            while True:
                loop.append(h)
                remaining.discard(h)
                h = int(self.he_next[h])
                if h == h0:
                    break
                if len(loop) > self.n_halfedges:
                    raise MeshError("boundary loop does not close")
            loops.append(loop)
        return loops

    # -- geometry ----------------------------------------------------------

    def cell_area(self, c: int) -> float:
        return polygon_area(self.cell_coords(c))

    def cell_areas(self) -> np.ndarray:
        return np.array([self.cell_area(c) for c in range(self.n_cells)])

    def cell_sizes(self) -> np.ndarray:
        """Number of vertices per cell."""
        return np.array([len(self.cell_vertices(c))
                         for c in range(self.n_cells)])

    def to_cells(self) -> list[list[int]]:
        return [self.cell_vertices(c).tolist() for c in range(self.n_cells)]

    def copy(self) -> "PolygonMesh":
        return build_from_cells(
            self.xy.copy(), self.to_cells(),
            levels=self.cell_level.copy(), tokens=self.cell_token.copy(),
            derived=self.node_derived.copy(), ancestry=dict(self.ancestry),
            token_next=self.token_next)


# ---------------------------------------------------------------------------
# construction
# ---------------------------------------------------------------------------

def build_from_cells(points, cells, levels=None, tokens=None, derived=None,
                     ancestry=None, token_next=0) -> PolygonMesh:
    """Build halfedge connectivity from a point array and CCW vertex loops.

    Parameters
    ----------
    points : (n, 2) array of node coordinates.
    cells : sequence of vertex-id loops, one per cell, counterclockwise.

    Raises ``MeshError`` on clockwise or degenerate cells, non-manifold
    edges or vertices, and unused points.
    """
    xy = np.asarray(points, dtype=float)
    if xy.ndim != 2 or xy.shape[1] != 2:
        raise MeshError("points must be an (n, 2) array")
    n_nodes = len(xy)
    n_cells = len(cells)
    used = np.zeros(n_nodes, dtype=bool)

    he_origin: list[int] = []
    he_next: list[int] = []
    he_prev: list[int] = []
    he_cell: list[int] = []
    cell_he = np.empty(n_cells, dtype=np.int64)
    directed: dict[tuple[int, int], int] = {}

    for c, loop in enumerate(cells):
        loop = [int(v) for v in loop]
        if len(loop) < 3:
            raise MeshError(f"cell {c} has fewer than 3 vertices")
        if len(set(loop)) != len(loop):
            raise MeshError(f"cell {c} repeats a vertex")
        for v in loop:
            if v < 0 or v >= n_nodes:
                raise MeshError(f"cell {c} references unknown node {v}")
            used[v] = True
        if polygon_area(xy[loop]) <= 0.0:
            raise MeshError(f"cell {c} is clockwise or degenerate")
        base = len(he_origin)
        m = len(loop)
        for j in range(m):
            u, v = loop[j], loop[(j + 1) % m]
            key = (u, v)
            if key in directed:
                raise MeshError(
                    f"non-manifold edge ({u}, {v}): same orientation twice")
            directed[key] = base + j
            he_origin.append(u)
            he_next.append(base + (j + 1) % m)
            he_prev.append(base + (j - 1) % m)
            he_cell.append(c)
        cell_he[c] = base

    if not used.all():
        missing = np.where(~used)[0]
        raise MeshError(f"{len(missing)} node(s) not used by any cell, "
                        f"first: {missing[:5].tolist()}")

    n_interior = len(he_origin)
    he_twin = np.full(n_interior, -1, dtype=np.int64)
    boundary_edges = []
    for (u, v), h in directed.items():
        partner = directed.get((v, u))
        if partner is not None:
            he_twin[h] = partner
        else:
            boundary_edges.append((v, u, h))

    # explicit boundary halfedges, linked into loops along the boundary
    he_origin = list(he_origin)
    he_twin = list(he_twin)
    origin_to_bhe: dict[int, int] = {}
    for (u, v, inner) in boundary_edges:
        h = len(he_origin)
        if u in origin_to_bhe:
            raise MeshError(f"non-manifold (pinched) boundary vertex {u}")
        origin_to_bhe[u] = h
        he_origin.append(u)
        he_twin.append(inner)
        he_twin[inner] = h
        he_next.append(-1)
        he_prev.append(-1)
        he_cell.append(EXTERIOR)
    for u, h in origin_to_bhe.items():
        v = he_origin[he_twin[h]]  # destination of the boundary halfedge
        nxt = origin_to_bhe.get(v)
        if nxt is None:
            raise MeshError(f"boundary chain broken at node {v}")
        he_next[h] = nxt
        he_prev[nxt] = h

    node_he = np.full(n_nodes, -1, dtype=np.int64)
    for h in range(len(he_origin) - 1, -1, -1):
        node_he[he_origin[h]] = h  # later overwritten by interior halfedges

    if levels is None:
        levels = np.zeros(n_cells, dtype=np.int64)
    if tokens is None:
        tokens = np.full(n_cells, NO_TOKEN, dtype=np.int64)
    if derived is None:
        derived = np.zeros(n_nodes, dtype=bool)

    return PolygonMesh(xy, he_origin, he_twin, he_next, he_prev, he_cell,
                       cell_he, node_he, levels, tokens, derived,
                       ancestry=ancestry, token_next=token_next)


def uniform_quad_mesh(x0: float, x1: float, y0: float, y1: float,
                      nx: int, ny: int) -> PolygonMesh:
    """Structured quadrilateral mesh of the rectangle [x0,x1] x [y0,y1]."""
    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    X, Y = np.meshgrid(xs, ys, indexing="xy")
    points = np.column_stack([X.ravel(), Y.ravel()])
    cells = []
    for j in range(ny):
        for i in range(nx):
            v0 = j * (nx + 1) + i
            cells.append([v0, v0 + 1, v0 + nx + 2, v0 + nx + 1])
    return build_from_cells(points, cells)


# ---------------------------------------------------------------------------
# audit
# ---------------------------------------------------------------------------

def audit_mesh(mesh: PolygonMesh, area_tol: float = 1e-9) -> dict:
    """Check every structural invariant of the halfedge complex.

    Raises ``MeshError`` at the first violation, otherwise returns a stats
    dict (counts, boundary loop count, total area).
    """
    nh = mesh.n_halfedges
    tw, nx, pv = mesh.he_twin, mesh.he_next, mesh.he_prev
    if nh % 2:
        raise MeshError("odd number of halfedges")
    h = np.arange(nh)
    if not np.array_equal(tw[tw], h):
        raise MeshError("twin is not an involution")
    if np.any(tw == h):
        raise MeshError("halfedge is its own twin")
    if not np.array_equal(nx[pv], h) or not np.array_equal(pv[nx], h):
        raise MeshError("next/prev are not inverse")
    if not np.array_equal(mesh.he_cell[nx], mesh.he_cell):
        raise MeshError("next leaves its cell")
    if not np.array_equal(mesh.he_origin[nx], mesh.he_origin[tw]):
        raise MeshError("destination mismatch: origin(next) != origin(twin)")

    seen = np.zeros(nh, dtype=bool)
    area_cells = 0.0
    for c in range(mesh.n_cells):
        hes = mesh.cell_halfedges(c)
        if len(hes) < 3:
            raise MeshError(f"cell {c} has fewer than 3 halfedges")
        for e in hes:
            if mesh.he_cell[e] != c:
                raise MeshError(f"cell pointer mismatch on halfedge {e}")
            if seen[e]:
                raise MeshError(f"halfedge {e} visited twice")
            seen[e] = True
        a = mesh.cell_area(c)
        if a <= 0.0:
            raise MeshError(f"cell {c} has non-positive area {a}")
        area_cells += a

    loops = mesh.boundary_loops()
    area_loops = 0.0
    for loop in loops:
        for e in loop:
            if seen[e]:
                raise MeshError(f"halfedge {e} in cell and boundary loop")
            seen[e] = True
        area_loops += polygon_area(mesh.xy[mesh.he_origin[loop]])
    if not seen.all():
        raise MeshError("orphan halfedges outside any cell or boundary loop")
    if abs(area_cells + area_loops) > area_tol * max(area_cells, 1.0):
        raise MeshError("boundary loop area does not close the cell area")

    for v in range(mesh.n_nodes):
        if mesh.node_he[v] < 0 or mesh.he_origin[mesh.node_he[v]] != v:
            raise MeshError(f"node_he broken at node {v}")
        mesh.node_cells(v)  # raises if the vertex orbit does not close

    euler = mesh.n_nodes - mesh.n_edges + mesh.n_cells
    if euler != 2 - len(loops):
        raise MeshError(
            f"Euler characteristic {euler} != {2 - len(loops)} "
            f"for {len(loops)} boundary loop(s)")

    return {
        "n_nodes": mesh.n_nodes,
        "n_edges": mesh.n_edges,
        "n_cells": mesh.n_cells,
        "n_halfedges": nh,
        "n_boundary_loops": len(loops),
        "area": area_cells,
        "euler": euler,
    }


# ---------------------------------------------------------------------------
# refinement
# ---------------------------------------------------------------------------

def refine_cells(mesh: PolygonMesh, counts,
                 max_level: int = DEFAULT_MAX_LEVEL
                 ) -> tuple[PolygonMesh, MeshMap]:
    """Split marked cells, ``counts[c]`` generations deep.

    Each split replaces an n-gon by n quad-like children: edge midpoints are
    joined to a star point of the cell.  Midpoints appear as hanging
    vertices in unsplit neighbours.  Requested depths that would exceed
    ``max_level`` are clamped (and counted in the returned map).
    """
    counts = np.asarray(counts, dtype=np.int64).copy()
    if counts.shape != (mesh.n_cells,):
        raise MeshError("counts must have one entry per cell")
    if np.any(counts < 0):
        raise MeshError("refine counts must be non-negative")

    allowed = max_level - mesh.cell_level
    clamped = int(np.sum(counts > allowed))
    if clamped:
        logger.warning("clamped refinement depth on %d cell(s) at level cap %d",
                       clamped, max_level)
    counts = np.minimum(counts, allowed)

    pts = [tuple(p) for p in mesh.xy]
    derived = list(mesh.node_derived)
    polys = mesh.to_cells()
    levels = list(mesh.cell_level)
    tokens = list(mesh.cell_token)
    todo = list(counts)
    prov = [[c] for c in range(mesh.n_cells)]
    ancestry = dict(mesh.ancestry)
    token_next = mesh.token_next

    while any(t > 0 for t in todo):
        midpoint: dict[tuple[int, int], int] = {}

        def edge_mid(u: int, v: int) -> int:
            key = (u, v) if u < v else (v, u)
            m = midpoint.get(key)
            if m is None:
                m = len(pts)
                pts.append(((pts[u][0] + pts[v][0]) / 2.0,
                            (pts[u][1] + pts[v][1]) / 2.0))
                derived.append(True)
                midpoint[key] = m
            return m

        new_polys, new_levels, new_tokens, new_todo, new_prov = [], [], [], [], []
        split_mask = [t > 0 for t in todo]
        for ci, poly in enumerate(polys):
            if not split_mask[ci]:
                continue
            # register midpoints first so neighbours can pick them up
            for j in range(len(poly)):
                edge_mid(poly[j], poly[(j + 1) % len(poly)])

        for ci, poly in enumerate(polys):
            if split_mask[ci]:
                coords = np.array([pts[v] for v in poly])
                b = len(pts)
                sp = star_point(coords)
                pts.append((float(sp[0]), float(sp[1])))
                derived.append(True)
                tok = token_next
                token_next += 1
                n = len(poly)
                ancestry[tok] = (levels[ci], tokens[ci], n)
                for j in range(n):
                    m_prev = edge_mid(poly[j - 1], poly[j])
                    m_next = edge_mid(poly[j], poly[(j + 1) % n])
                    new_polys.append([poly[j], m_next, b, m_prev])
                    new_levels.append(levels[ci] + 1)
                    new_tokens.append(tok)
                    new_todo.append(todo[ci] - 1)
                    new_prov.append(prov[ci])
            else:
                out = []
                n = len(poly)
                for j in range(n):
                    u, v = poly[j], poly[(j + 1) % n]
                    out.append(u)
                    key = (u, v) if u < v else (v, u)
                    if key in midpoint:
                        out.append(midpoint[key])
                new_polys.append(out)
                new_levels.append(levels[ci])
                new_tokens.append(tokens[ci])
                new_todo.append(0)
                new_prov.append(prov[ci])
        polys, levels, tokens, todo, prov = (
            new_polys, new_levels, new_tokens, new_todo, new_prov)

    out = build_from_cells(np.array(pts), polys,
                           levels=np.array(levels, dtype=np.int64),
                           tokens=np.array(tokens, dtype=np.int64),
                           derived=np.array(derived, dtype=bool),
                           ancestry=ancestry, token_next=token_next)
    node_map = np.arange(mesh.n_nodes, dtype=np.int64)
    return out, MeshMap("refine", prov, node_map, clamped=clamped)


def refine_uniform(mesh: PolygonMesh, n: int = 1,
                   max_level: int = DEFAULT_MAX_LEVEL
                   ) -> tuple[PolygonMesh, MeshMap]:
    """Refine every cell ``n`` times."""
    return refine_cells(mesh, np.full(mesh.n_cells, n), max_level=max_level)


# ---------------------------------------------------------------------------
# coarsening
# ---------------------------------------------------------------------------

def coarsen_cells(mesh: PolygonMesh, marks) -> tuple[PolygonMesh, MeshMap]:
    """Merge marked sibling groups back into their parents (one level).

    A group merges only when every child of the same split is marked.  Edge
    midpoints on the parent outline are kept while any other cell still uses
    them; refinement-created vertices that end up straight in every incident
    cell are removed, so a full refine/coarsen round trip restores the
    original mesh exactly.
    """
    marks = np.asarray(marks, dtype=bool)
    if marks.shape != (mesh.n_cells,):
        raise MeshError("marks must have one entry per cell")

    groups: dict[int, list[int]] = {}
    for c in np.where(marks)[0]:
        tok = int(mesh.cell_token[c])
        if tok != NO_TOKEN:
            groups.setdefault(tok, []).append(int(c))

    merge_sets = []
    for tok, members in groups.items():
        level, parent_tok, n_children = mesh.ancestry[tok]
        if len(members) == n_children:
            merge_sets.append((tok, level, parent_tok, sorted(members)))
    if not merge_sets:
        ident = np.arange(mesh.n_nodes, dtype=np.int64)
        return mesh, MeshMap("coarsen", [[c] for c in range(mesh.n_cells)],
                             ident)

    merged_cells = set()
    for _, _, _, members in merge_sets:
        merged_cells.update(members)

    polys: list[list[int]] = []
    levels: list[int] = []
    tokens: list[int] = []
    prov: list[list[int]] = []
    for c in range(mesh.n_cells):
        if c in merged_cells:
            continue
        polys.append(mesh.cell_vertices(c).tolist())
        levels.append(int(mesh.cell_level[c]))
        tokens.append(int(mesh.cell_token[c]))
        prov.append([c])

    for tok, level, parent_tok, members in merge_sets:
        loop = _group_boundary_loop(mesh, members)
        polys.append(loop)
        levels.append(level)
        tokens.append(parent_tok)
        prov.append(members)

    _strip_straight_derived_nodes(mesh, polys)

    used = sorted({v for poly in polys for v in poly})
    node_map = np.full(mesh.n_nodes, -1, dtype=np.int64)
    node_map[used] = np.arange(len(used))
    new_polys = [[int(node_map[v]) for v in poly] for poly in polys]

    out = build_from_cells(
        mesh.xy[used], new_polys,
        levels=np.array(levels, dtype=np.int64),
        tokens=np.array(tokens, dtype=np.int64),
        derived=mesh.node_derived[used],
        ancestry=dict(mesh.ancestry), token_next=mesh.token_next)
    return out, MeshMap("coarsen", prov, node_map)


def _group_boundary_loop(mesh: PolygonMesh, members: list[int]) -> list[int]:
    """Outer vertex loop of a sibling group, CCW."""
    cells = set(members)
    edges: dict[int, int] = {}
    for c in members:
        poly = mesh.cell_vertices(c)
        n = len(poly)
        for j in range(n):
            u, v = int(poly[j]), int(poly[(j + 1) % n])
            edges[(u, v)] = v
    boundary = {u: v for (u, v) in edges if (v, u) not in edges}
    if not boundary:
        raise MeshError("sibling group has no boundary")
    start = min(boundary)
    loop = [start]
    v = boundary[start]
    while v != start:
        loop.append(v)
        v = boundary[v]
        if len(loop) > len(boundary):
            raise MeshError("sibling group boundary does not close")
    if len(loop) != len(boundary):
        raise MeshError("sibling group boundary is not a single loop")
    return loop


def _strip_straight_derived_nodes(mesh: PolygonMesh,
                                  polys: list[list[int]]) -> None:
    """Drop refinement-created vertices that are straight in every cell."""
    node_polys: dict[int, list[int]] = {}
    for pi, poly in enumerate(polys):
        for v in poly:
            node_polys.setdefault(v, []).append(pi)
    candidates = [v for v in node_polys if mesh.node_derived[v]]
    changed = True
    while changed:
        changed = False
        for v in candidates:
            owners = node_polys.get(v)
            if not owners:
                continue
            removable = True
            for pi in owners:
                poly = polys[pi]
                if len(poly) <= 3:
                    removable = False
                    break
                j = poly.index(v)
                if not _is_straight(mesh.xy[poly[j - 1]], mesh.xy[v],
                                    mesh.xy[poly[(j + 1) % len(poly)]]):
                    removable = False
                    break
            if removable:
                for pi in owners:
                    polys[pi].remove(v)
                node_polys[v] = []
                changed = True
