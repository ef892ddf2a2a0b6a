"""Virtual element spaces of order 1 and 2 on polygonal meshes.

Degrees of freedom: vertex values, for order 2 additionally one value per
edge (at the midpoint) and the cell average (moment against the constant
monomial).  All element quantities are computed on the scaled cell
``(x - centroid) / diameter`` and cached by the rounded scaled vertex
coordinates: the elliptic projector, stiffness matrix and quadrature layout
are scale invariant in 2D while the mass matrix picks up a factor
``diameter**2``.  This makes assembly on meshes with repeated cell shapes
(uniform or hierarchically refined) essentially table lookup.

Projectors per element, with ``m_a`` the scaled monomials:

- energy projector ``P_n``: ``(grad m_a, grad(P_n v - v)) = 0`` plus a mean
  constraint (vertex average for order 1, cell average for order 2),
  computable from the DOFs via integration by parts;
- L2 projector ``P_0``: equals ``P_n`` for order 1; for order 2 it uses the
  enhancement convention, taking the degree 1 and 2 moments of ``v`` from
  ``P_n v``.

Stabilization is the plain dofi-dofi product for the stiffness part and the
area-scaled dofi-dofi product for the mass part.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .halfedge import PolygonMesh, polygon_area, polygon_centroid, \
    polygon_diameter, triangulate_polygon

logger = logging.getLogger("polyscft.vem")

EXPONENTS = [(0, 0), (1, 0), (0, 1), (2, 0), (1, 1), (0, 2)]
_CHUNK = 4096


def n_poly_basis(k: int) -> int:
    """Dimension of bivariate polynomials of total degree <= k."""
    return (k + 1) * (k + 2) // 2


def monomials(pts: np.ndarray, k: int) -> np.ndarray:
    """Scaled-monomial values, shape (n_pts, n_poly_basis(k))."""
    pts = np.atleast_2d(pts)
    x, y = pts[:, 0], pts[:, 1]
    cols = [x ** a * y ** b for a, b in EXPONENTS[: n_poly_basis(k)]]
    return np.stack(cols, axis=1)


def monomial_gradients(pts: np.ndarray, k: int) -> np.ndarray:
    """Gradients of the scaled monomials, shape (n_pts, n_basis, 2)."""
    pts = np.atleast_2d(pts)
    x, y = pts[:, 0], pts[:, 1]
    zero = np.zeros_like(x)
    one = np.ones_like(x)
    table = [
        (zero, zero),
        (one, zero),
        (zero, one),
        (2 * x, zero),
        (y, x),
        (zero, 2 * y),
    ]
    nk = n_poly_basis(k)
    out = np.empty((len(x), nk, 2))
    for a, (gx, gy) in enumerate(table[:nk]):
        out[:, a, 0] = gx
        out[:, a, 1] = gy
    return out


# ---------------------------------------------------------------------------
# quadrature
# ---------------------------------------------------------------------------

_TRI_RULES: dict[int, tuple[np.ndarray, np.ndarray]] = {}


def triangle_rule(degree: int) -> tuple[np.ndarray, np.ndarray]:
    """Quadrature on the reference triangle (0,0),(1,0),(0,1).

    Built by collapsing a tensor Gauss-Legendre rule (Duffy transform),
    which is exact for all polynomials of total degree <= ``degree``.
    Weights sum to 1/2.  Cached per degree.
    """
    rule = _TRI_RULES.get(degree)
    if rule is not None:
        return rule
    nu = (degree + 3) // 2
    nt = (degree + 2) // 2
    xu, wu = np.polynomial.legendre.leggauss(nu)
    xt, wt = np.polynomial.legendre.leggauss(nt)
    u = 0.5 * (xu + 1.0)
    t = 0.5 * (xt + 1.0)
    wu = 0.5 * wu
    wt = 0.5 * wt
    U, T = np.meshgrid(u, t, indexing="ij")
    WU, WT = np.meshgrid(wu, wt, indexing="ij")
    x = (U * (1.0 - T)).ravel()
    y = (U * T).ravel()
    w = (WU * WT * U).ravel()
    rule = (np.column_stack([x, y]), w)
    _TRI_RULES[degree] = rule
    return rule


def polygon_quadrature(coords: np.ndarray, degree: int
                       ) -> tuple[np.ndarray, np.ndarray]:
    """Quadrature points and weights on a simple CCW polygon.

    Fans the polygon into triangles from a star point (ear clipping as a
    fallback) and maps the reference triangle rule onto each.  Weights sum
    to the polygon area.
    """
    ref_pts, ref_w = triangle_rule(degree)
    _, tris = triangulate_polygon(coords)
    a = tris[:, 0]
    e1 = tris[:, 1] - a
    e2 = tris[:, 2] - a
    det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
    pts = (a[:, None, :] + ref_pts[None, :, 0, None] * e1[:, None, :]
           + ref_pts[None, :, 1, None] * e2[:, None, :])
    w = det[:, None] * ref_w[None, :]
    return pts.reshape(-1, 2), w.ravel()


# ---------------------------------------------------------------------------
# element shapes (scale-normalized, cached)
# ---------------------------------------------------------------------------

@dataclass
class ElementShape:
    """Projectors and matrices of one scaled polygon shape."""

    k: int
    nv: int
    ndof: int
    vhat: np.ndarray          # scaled vertices, centroid 0, diameter 1
    area: float               # scaled area
    D: np.ndarray             # dofs of the monomials, (ndof, nk)
    G: np.ndarray             # energy-projector system matrix
    B: np.ndarray             # energy-projector right-hand side
    pi_n: np.ndarray          # energy projector, coefficient form (nk, ndof)
    pi_n_dof: np.ndarray      # energy projector, dof form (ndof, ndof)
    pi_0: np.ndarray          # L2 projector, coefficient form
    H: np.ndarray             # monomial mass Gram (scaled)
    A: np.ndarray             # stiffness (scale invariant)
    M: np.ndarray             # mass for the scaled cell (real = diam^2 * M)
    Mc: np.ndarray            # consistency-only mass (scaled)
    qpts: np.ndarray          # quadrature points (scaled), (nq, 2)
    qwts: np.ndarray          # quadrature weights (scaled), sum = area
    Vq: np.ndarray            # L2-projected basis at qpts, (nq, ndof)


_SHAPE_CACHE: dict = {}


def clear_shape_cache() -> None:
    _SHAPE_CACHE.clear()


def scale_polygon(coords: np.ndarray
                  ) -> tuple[np.ndarray, np.ndarray, float]:
    """Centroid, diameter and the scaled vertex array of a polygon."""
    centroid = polygon_centroid(coords)
    h = polygon_diameter(coords)
    return centroid, h, (coords - centroid) / h


def element_shape(vhat: np.ndarray, k: int) -> ElementShape:
    key = (k, (np.round(vhat, 10) + 0.0).tobytes())
    shape = _SHAPE_CACHE.get(key)
    if shape is None:
        shape = _build_shape(np.asarray(vhat, dtype=float), k)
        _SHAPE_CACHE[key] = shape
    return shape


def _build_shape(vh: np.ndarray, k: int) -> ElementShape:
    nv = len(vh)
    nk = n_poly_basis(k)
    ndof = nv * k + (1 if k == 2 else 0)
    area = polygon_area(vh)
    qpts, qwts = polygon_quadrature(vh, 2 * k + 2)
    Mq = monomials(qpts, k)
    H = (Mq * qwts[:, None]).T @ Mq
    moments = qwts @ Mq / area

    D = np.zeros((ndof, nk))
    D[:nv] = monomials(vh, k)
    if k == 2:
        mids = 0.5 * (vh + np.roll(vh, -1, axis=0))
        D[nv:2 * nv] = monomials(mids, k)
        D[2 * nv] = moments

    # right-hand side of the energy projector: boundary quadrature of
    # v * (normal derivative of m_a), the trace rule hitting the edge dofs
    # exactly (trapezoid for order 1, Simpson for order 2), minus the
    # volume term against the monomial Laplacian for order 2.
    tang = np.roll(vh, -1, axis=0) - vh
    ell = np.sqrt((tang ** 2).sum(axis=1))
    normals = np.column_stack([tang[:, 1], -tang[:, 0]]) / ell[:, None]
    B = np.zeros((nk, ndof))
    if k == 1:
        B[0, :nv] = 1.0 / nv
        gv = monomial_gradients(vh, k)
        dn = np.einsum("vad,vd->va", gv, normals)        # at edge start
        dn_next = np.einsum("vad,vd->va",
                            np.roll(gv, -1, axis=0), normals)
        for j in range(nv):
            B[1:, j] += 0.5 * ell[j] * dn[j, 1:]
            B[1:, (j + 1) % nv] += 0.5 * ell[j] * dn_next[j, 1:]
    else:
        B[0, 2 * nv] = 1.0
        gv = monomial_gradients(vh, k)
        gm = monomial_gradients(0.5 * (vh + np.roll(vh, -1, axis=0)), k)
        dn = np.einsum("vad,vd->va", gv, normals)
        dn_next = np.einsum("vad,vd->va",
                            np.roll(gv, -1, axis=0), normals)
        dn_mid = np.einsum("vad,vd->va", gm, normals)
        for j in range(nv):
            B[1:, j] += ell[j] / 6.0 * dn[j, 1:]
            B[1:, (j + 1) % nv] += ell[j] / 6.0 * dn_next[j, 1:]
            B[1:, nv + j] += 4.0 * ell[j] / 6.0 * dn_mid[j, 1:]
        # laplacians of the scaled monomials x^2 and y^2 are both 2
        B[3, 2 * nv] -= 2.0 * area
        B[5, 2 * nv] -= 2.0 * area

    Gq = monomial_gradients(qpts, k)
    grad_gram = np.einsum("qad,q,qbd->ab", Gq, qwts, Gq)
    G = grad_gram.copy()
    if k == 1:
        G[0] = D[:nv].mean(axis=0)
    else:
        G[0] = moments

    pi_n = np.linalg.solve(G, B)
    pi_n_dof = D @ pi_n
    eye = np.eye(ndof)
    A = pi_n.T @ grad_gram @ pi_n \
        + (eye - pi_n_dof).T @ (eye - pi_n_dof)

    if k == 1:
        pi_0 = pi_n
    else:
        C = np.zeros((nk, ndof))
        C[0, 2 * nv] = area
        C[1:] = (H @ pi_n)[1:]
        pi_0 = np.linalg.solve(H, C)
    pi_0_dof = D @ pi_0
    Mc = pi_0.T @ H @ pi_0
    M = Mc + area * (eye - pi_0_dof).T @ (eye - pi_0_dof)
    Vq = Mq @ pi_0

    return ElementShape(k=k, nv=nv, ndof=ndof, vhat=vh, area=area, D=D,
                        G=G, B=B, pi_n=pi_n, pi_n_dof=pi_n_dof, pi_0=pi_0,
                        H=H, A=A, M=M, Mc=Mc, qpts=qpts, qwts=qwts, Vq=Vq)


# ---------------------------------------------------------------------------
# global dof numbering
# ---------------------------------------------------------------------------

class DofMap:
    """Global numbering: vertex dofs, then edge dofs, then cell moments."""

    def __init__(self, mesh: PolygonMesh, k: int):
        if k not in (1, 2):
            raise ValueError("only orders 1 and 2 are supported")
        self.mesh = mesh
        self.k = k
        nh = mesh.n_halfedges
        edge_of_he = np.full(nh, -1, dtype=np.int64)
        eid = 0
        for h in range(nh):
            t = mesh.he_twin[h]
            if edge_of_he[h] < 0:
                edge_of_he[h] = edge_of_he[t] = eid
                eid += 1
        self.edge_of_he = edge_of_he
        self.n_edges = eid
        self.n_vertex_dofs = mesh.n_nodes
        if k == 1:
            self.n_dofs = mesh.n_nodes
        else:
            self.n_dofs = mesh.n_nodes + self.n_edges + mesh.n_cells
        self._cell_dofs: list[np.ndarray | None] = [None] * mesh.n_cells

    def cell_dofs(self, c: int) -> np.ndarray:
        cached = self._cell_dofs[c]
        if cached is None:
            mesh = self.mesh
            hes = mesh.cell_halfedges(c)
            verts = mesh.he_origin[hes]
            if self.k == 1:
                cached = verts.astype(np.int64)
            else:
                edges = self.edge_of_he[hes] + mesh.n_nodes
                moment = mesh.n_nodes + self.n_edges + c
                cached = np.concatenate([verts, edges, [moment]])
            self._cell_dofs[c] = cached
        return cached

    def dof_points(self) -> tuple[np.ndarray, np.ndarray]:
        """Coordinates of all dofs and a moment-dof mask.

        Point dofs (vertices, edge midpoints) carry their true location;
        moment dofs are listed at the cell centroid and flagged.
        """
        mesh = self.mesh
        pts = [mesh.xy]
        if self.k == 2:
            mids = np.zeros((self.n_edges, 2))
            for h in range(mesh.n_halfedges):
                e = self.edge_of_he[h]
                u = mesh.he_origin[h]
                v = mesh.he_origin[mesh.he_twin[h]]
                mids[e] = 0.5 * (mesh.xy[u] + mesh.xy[v])
            cents = np.array([polygon_centroid(mesh.cell_coords(c))
                              for c in range(mesh.n_cells)])
            pts += [mids, cents]
        pts = np.vstack(pts)
        is_moment = np.zeros(self.n_dofs, dtype=bool)
        if self.k == 2:
            is_moment[mesh.n_nodes + self.n_edges:] = True
        return pts, is_moment


# ---------------------------------------------------------------------------
# assembled system
# ---------------------------------------------------------------------------

@dataclass
class _DofClass:
    """Cells sharing a vertex count, stacked for batched operations."""

    nv: int
    ndof: int
    cells: np.ndarray         # (nc,)
    dofs: np.ndarray          # (nc, ndof) global dof ids
    shape_idx: np.ndarray     # (nc,) index into the shape list
    h: np.ndarray             # (nc,) cell diameters
    centroid: np.ndarray      # (nc, 2)
    shapes: list[ElementShape]
    vq_arr: np.ndarray = field(default=None)      # (ns, nq, ndof)
    qw_arr: np.ndarray = field(default=None)      # (ns, nq) scaled weights
    qp_arr: np.ndarray = field(default=None)      # (ns, nq, 2) scaled points
    pin_arr: np.ndarray = field(default=None)     # (ns, nk, ndof)

    def finalize(self):
        for name in ("cells", "shape_idx"):
            setattr(self, name, np.asarray(getattr(self, name), np.int64))
        self.dofs = np.asarray(self.dofs, dtype=np.int64)
        self.h = np.asarray(self.h, dtype=float)
        self.centroid = np.asarray(self.centroid, dtype=float)
        nq = max(len(s.qwts) for s in self.shapes)
        ns = len(self.shapes)
        self.vq_arr = np.zeros((ns, nq, self.ndof))
        self.qw_arr = np.zeros((ns, nq))
        self.qp_arr = np.zeros((ns, nq, 2))
        nk = self.shapes[0].pi_n.shape[0]
        self.pin_arr = np.zeros((ns, nk, self.ndof))
        for i, s in enumerate(self.shapes):
            m = len(s.qwts)
            self.vq_arr[i, :m] = s.Vq
            self.qw_arr[i, :m] = s.qwts
            self.qp_arr[i, :m] = s.qpts
            self.pin_arr[i] = s.pi_n


class VemSystem:
    """Global mass, stiffness and field-weighted operators on one mesh.

    Attributes
    ----------
    M, A : csr_matrix
        Mass and stiffness matrices with stabilization.
    Mc : csr_matrix
        Consistency-only (projected) mass matrix.
    ell : ndarray
        Integration functional; ``ell @ u`` integrates the projected field.
    area : float
        Domain area.
    """

    def __init__(self, mesh: PolygonMesh, k: int):
        self.mesh = mesh
        self.k = int(k)
        self.dofmap = DofMap(mesh, self.k)
        self.n_dofs = self.dofmap.n_dofs
        self._classes: dict[int, _DofClass] = {}
        self._tree = None
        self._assemble()
        self.ell = np.asarray(self.M @ np.ones(self.n_dofs)).ravel()
        self.area = float(self.ell.sum())

    # -- construction ------------------------------------------------------

    def _assemble(self):
        mesh, k = self.mesh, self.k
        nc = mesh.n_cells
        self.cell_h = np.empty(nc)
        self.cell_centroid = np.empty((nc, 2))
        self.cell_area = np.empty(nc)
        sizes = []
        metas = []
        for c in range(nc):
            coords = mesh.cell_coords(c)
            centroid, h, vhat = scale_polygon(coords)
            shape = element_shape(vhat, k)
            dofs = self.dofmap.cell_dofs(c)
            self.cell_h[c] = h
            self.cell_centroid[c] = centroid
            self.cell_area[c] = shape.area * h * h
            metas.append((shape, dofs))
            sizes.append(shape.ndof)

            cls = self._classes.get(shape.nv)
            if cls is None:
                cls = _DofClass(nv=shape.nv, ndof=shape.ndof, cells=[],
                                dofs=[], shape_idx=[], h=[], centroid=[],
                                shapes=[])
                cls._lookup = {}
                self._classes[shape.nv] = cls
            si = cls._lookup.get(id(shape))
            if si is None:
                si = len(cls.shapes)
                cls.shapes.append(shape)
                cls._lookup[id(shape)] = si
            cls.cells.append(c)
            cls.dofs.append(dofs)
            cls.shape_idx.append(si)
            cls.h.append(h)
            cls.centroid.append(centroid)

        for cls in self._classes.values():
            cls.finalize()

        total = int(sum(s * s for s in sizes))
        rows = np.empty(total, dtype=np.int32)
        cols = np.empty(total, dtype=np.int32)
        dM = np.empty(total)
        dA = np.empty(total)
        dMc = np.empty(total)
        pos = 0
        for c in range(nc):
            shape, dofs = metas[c]
            n = shape.ndof
            blk = n * n
            h2 = self.cell_h[c] ** 2
            r = np.repeat(dofs, n)
            rows[pos:pos + blk] = r
            cols[pos:pos + blk] = np.tile(dofs, n)
            dM[pos:pos + blk] = (h2 * shape.M).ravel()
            dA[pos:pos + blk] = shape.A.ravel()
            dMc[pos:pos + blk] = (h2 * shape.Mc).ravel()
            pos += blk
        shape_g = (self.n_dofs, self.n_dofs)
        self.M = sp.coo_matrix((dM, (rows, cols)), shape=shape_g).tocsr()
        self.A = sp.coo_matrix((dA, (rows, cols)), shape=shape_g).tocsr()
        self.Mc = sp.coo_matrix((dMc, (rows, cols)), shape=shape_g).tocsr()
        self._metas = metas

    # -- operators ---------------------------------------------------------

    def build_cross_mass(self, w: np.ndarray) -> sp.csr_matrix:
        """Assemble the field-weighted mass ``(P0 w . P0 phi_i, P0 phi_j)``."""
        w = np.asarray(w, dtype=float)
        total = int(sum(len(cls.cells) * cls.ndof ** 2
                        for cls in self._classes.values()))
        rows = np.empty(total, dtype=np.int32)
        cols = np.empty(total, dtype=np.int32)
        data = np.empty(total)
        pos = 0
        for cls in self._classes.values():
            n = cls.ndof
            blk = n * n
            for lo in range(0, len(cls.cells), _CHUNK):
                sl = slice(lo, min(lo + _CHUNK, len(cls.cells)))
                idx = cls.shape_idx[sl]
                vq = cls.vq_arr[idx]
                dofs = cls.dofs[sl]
                wq = np.einsum("mqi,mi->mq", vq, w[dofs])
                cw = (cls.h[sl, None] ** 2) * cls.qw_arr[idx] * wq
                blocks = np.einsum("mqi,mq,mqj->mij", vq, cw, vq)
                m = dofs.shape[0]
                rows[pos:pos + m * blk] = \
                    np.repeat(dofs, n, axis=1).ravel()
                cols[pos:pos + m * blk] = \
                    np.tile(dofs, (1, n)).ravel()
                data[pos:pos + m * blk] = blocks.ravel()
                pos += m * blk
        out = sp.coo_matrix((data, (rows, cols)),
                            shape=(self.n_dofs, self.n_dofs)).tocsr()
        return out

    # -- field handling ----------------------------------------------------

    def interpolate(self, fun, quad_degree: int | None = None) -> np.ndarray:
        """DOF vector of a function: point values plus cell averages."""
        pts, is_moment = self.dofmap.dof_points()
        u = np.zeros(self.n_dofs)
        point_mask = ~is_moment
        u[point_mask] = fun(pts[point_mask])
        if self.k == 2:
            deg = quad_degree or (2 * self.k + 4)
            base = self.mesh.n_nodes + self.dofmap.n_edges
            for c in range(self.mesh.n_cells):
                qp, qw = polygon_quadrature(self.mesh.cell_coords(c), deg)
                u[base + c] = qw @ fun(qp) / qw.sum()
        return u

    def integrate(self, u: np.ndarray) -> float:
        return float(self.ell @ u)

    def l2_norm(self, u: np.ndarray) -> float:
        return float(np.sqrt(max(u @ (self.M @ u), 0.0)))

    def l2_error(self, fun, u: np.ndarray) -> float:
        """L2 distance between a function and the projected dof field."""
        err2 = 0.0
        for cls in self._classes.values():
            for lo in range(0, len(cls.cells), _CHUNK):
                sl = slice(lo, min(lo + _CHUNK, len(cls.cells)))
                idx = cls.shape_idx[sl]
                vq = cls.vq_arr[idx]
                vals = np.einsum("mqi,mi->mq", vq, u[cls.dofs[sl]])
                pts = cls.centroid[sl, None, :] \
                    + cls.h[sl, None, None] * cls.qp_arr[idx]
                w = (cls.h[sl, None] ** 2) * cls.qw_arr[idx]
                f = fun(pts.reshape(-1, 2)).reshape(vals.shape)
                err2 += float((w * (f - vals) ** 2).sum())
        return np.sqrt(err2)

    def poly_coeffs(self, u: np.ndarray) -> np.ndarray:
        """Energy-projector coefficients of ``u`` per cell, (n_cells, nk).

        Coefficients refer to the scaled monomials of each cell; the real
        gradient of the linear part is ``(c[1], c[2]) / diameter``.
        """
        nk = n_poly_basis(self.k)
        out = np.empty((self.mesh.n_cells, nk))
        for cls in self._classes.values():
            for lo in range(0, len(cls.cells), _CHUNK):
                sl = slice(lo, min(lo + _CHUNK, len(cls.cells)))
                pin = cls.pin_arr[cls.shape_idx[sl]]
                out[cls.cells[sl]] = np.einsum(
                    "mkj,mj->mk", pin, u[cls.dofs[sl]])
        return out

    def cell_quadrature(self):
        """Yield (cells, points, weights) batches in physical coordinates."""
        for cls in self._classes.values():
            idx = cls.shape_idx
            pts = cls.centroid[:, None, :] + cls.h[:, None, None] \
                * cls.qp_arr[idx]
            w = (cls.h[:, None] ** 2) * cls.qw_arr[idx]
            yield cls.cells, pts, w

    # -- point evaluation --------------------------------------------------

    def _locate(self, pts: np.ndarray) -> np.ndarray:
        from scipy.spatial import cKDTree
        if self._tree is None:
            self._tree = cKDTree(self.cell_centroid)
        pts = np.atleast_2d(pts)
        kq = min(12, self.mesh.n_cells)
        _, cand = self._tree.query(pts, k=kq)
        cand = np.atleast_2d(cand)
        out = np.empty(len(pts), dtype=np.int64)
        for i, p in enumerate(pts):
            hit = -1
            for c in cand[i]:
                if _point_in_cell(self.mesh, int(c), p):
                    hit = int(c)
                    break
            out[i] = hit if hit >= 0 else int(cand[i][0])
        return out

    def evaluate(self, u: np.ndarray, pts: np.ndarray,
                 cells: np.ndarray | None = None) -> np.ndarray:
        """Point values of the projected field at arbitrary locations."""
        pts = np.atleast_2d(pts)
        if cells is None:
            cells = self._locate(pts)
        coeffs = self.poly_coeffs(u)
        local = (pts - self.cell_centroid[cells]) / self.cell_h[cells, None]
        mon = monomials(local, self.k)
        return np.einsum("pk,pk->p", mon, coeffs[cells])


def _point_in_cell(mesh: PolygonMesh, c: int, p: np.ndarray) -> bool:
    poly = mesh.cell_coords(c)
    a = poly
    b = np.roll(poly, -1, axis=0)
    scale = np.abs(b - a).max()
    cross = (b[:, 0] - a[:, 0]) * (p[1] - a[:, 1]) \
        - (b[:, 1] - a[:, 1]) * (p[0] - a[:, 0])
    if np.all(cross >= -1e-12 * scale):
        return True
    crossings = 0
    for (ax, ay), (bx, by) in zip(a, b):
        if (ay > p[1]) != (by > p[1]):
            xs = ax + (p[1] - ay) * (bx - ax) / (by - ay)
            if p[0] < xs:
                crossings += 1
    return crossings % 2 == 1


def assemble(mesh: PolygonMesh, k: int) -> VemSystem:
    """Build the global system for order ``k`` on ``mesh``."""
    return VemSystem(mesh, k)
