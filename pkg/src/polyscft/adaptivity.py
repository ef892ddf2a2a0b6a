"""Interface-tracking mesh adaptation for the melt solver.

The error indicator is the element L2 norm of a recovered gradient of
the chain-end propagator: per-cell projected gradients are averaged at
nodes with harmonic area weights, extended back over each cell by
inverse-distance interpolation, and integrated.  Cells are marked with
an integer count from the base-2 log of their indicator relative to the
mean, so strongly flagged cells refine several levels in one pass.

The driver alternates converge-on-mesh / estimate / mark / adapt /
transfer cycles until the free energy is stable across cycles.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .halfedge import PolygonMesh, coarsen_cells, refine_cells
from .scft import (
    FieldState,
    ScftParams,
    ScftResult,
    scft_iterate,
    solve_chain,
)
from .vem import VemSystem, assemble

logger = logging.getLogger(__name__)


@dataclass
class ErrorIndicator:
    """Per-cell indicator values plus summary statistics."""

    eta: np.ndarray
    eta_bar: float
    eta_ref: float


# ---------------------------------------------------------------------------
# gradient recovery and the element indicator
# ---------------------------------------------------------------------------

def recovered_gradient(system: VemSystem, u: np.ndarray) -> np.ndarray:
    """Harmonic-area nodal average of the projected cell gradients.

    Each cell contributes its projected-polynomial gradient evaluated at
    the cell centroid, weighted by the reciprocal cell area; hanging
    nodes are ordinary polygon vertices and average over the cells that
    list them.  Returns an ``(n_nodes, 2)`` array.
    """
    coeffs = system.poly_coeffs(u)
    grads = coeffs[:, 1:3] / system.cell_h[:, None]
    inv_area = 1.0 / system.cell_area
    mesh = system.mesh
    num = np.zeros((mesh.n_nodes, 2))
    den = np.zeros(mesh.n_nodes)
    for cls in system._classes.values():
        verts = cls.dofs[:, :cls.nv]
        w = inv_area[cls.cells]
        np.add.at(num, verts.ravel(),
                  np.repeat(w[:, None] * grads[cls.cells], cls.nv, axis=0))
        np.add.at(den, verts.ravel(), np.repeat(w, cls.nv))
    if np.any(den == 0.0):
        raise ValueError("mesh has nodes without incident cells")
    return num / den[:, None]


def estimate(system: VemSystem, u: np.ndarray) -> ErrorIndicator:
    """Element L2 norms of the recovered-gradient field of ``u``.

    The nodal recovery is extended into each cell by inverse-distance
    weighting over the cell's vertices and integrated with the cell
    quadrature.  The summary ``eta_ref = std / (max - min)`` measures
    how concentrated the indicator distribution is (0 when flat).
    """
    rec = recovered_gradient(system, u)
    mesh = system.mesh
    eta_sq = np.zeros(mesh.n_cells)
    for cls in system._classes.values():
        verts = cls.dofs[:, :cls.nv]                    # (m, nv)
        idx = cls.shape_idx
        qp = cls.centroid[:, None, :] \
            + cls.h[:, None, None] * cls.qp_arr[idx]    # (m, nq, 2)
        qw = (cls.h[:, None] ** 2) * cls.qw_arr[idx]    # (m, nq)
        vxy = mesh.xy[verts]                            # (m, nv, 2)
        d = np.linalg.norm(qp[:, :, None, :] - vxy[:, None, :, :], axis=3)
        wgt = 1.0 / np.maximum(d, 1e-14)
        wgt /= wgt.sum(axis=2, keepdims=True)
        rv = rec[verts]                                 # (m, nv, 2)
        vals = np.einsum("mqv,mvd->mqd", wgt, rv)
        eta_sq[cls.cells] = np.einsum(
            "mq,mq->m", qw, (vals ** 2).sum(axis=2))
    eta = np.sqrt(np.maximum(eta_sq, 0.0))
    eta_bar = float(eta.mean()) if len(eta) else 0.0
    spread = float(eta.max() - eta.min()) if len(eta) else 0.0
    eta_ref = float(eta.std() / spread) if spread > 0.0 else 0.0
    return ErrorIndicator(eta=eta, eta_bar=eta_bar, eta_ref=eta_ref)


def log_mark(indicator: ErrorIndicator, theta: float = 1.0,
             max_refine: int = 3, max_coarsen: int = 2) -> np.ndarray:
    """Integer refine (+) / coarsen (-) counts per cell.

    ``n = round(log2(eta / (theta * eta_bar)))`` clamped to
    ``[-max_coarsen, max_refine]``; an all-zero indicator marks nothing.
    """
    if theta <= 0.0:
        raise ValueError("theta must be positive")
    eta = indicator.eta
    ref = theta * indicator.eta_bar
    if ref <= 0.0:
        return np.zeros(len(eta), dtype=np.int64)
    with np.errstate(divide="ignore"):
        ratio = np.log2(np.where(eta > 0.0, eta, np.nan) / ref)
    n = np.where(np.isnan(ratio), -max_coarsen,
                 np.rint(np.nan_to_num(ratio, neginf=-max_coarsen)))
    return np.clip(n, -max_coarsen, max_refine).astype(np.int64)


# ---------------------------------------------------------------------------
# field transfer between meshes
# ---------------------------------------------------------------------------

def transfer_dof_vector(old_system: VemSystem, new_system: VemSystem,
                        u: np.ndarray) -> np.ndarray:
    """Re-express a DOF vector on a new mesh of the same domain.

    Point DOFs take the value of the old projected polynomial at their
    location (the old cell found by point location); moment DOFs are
    cell averages of that piecewise polynomial by quadrature, which on
    merged cells equals the area-weighted combination of the child
    polynomials.
    """
    u = np.asarray(u, dtype=float)
    if u.shape != (old_system.n_dofs,):
        raise ValueError("dof vector does not match the source system")
    pts, is_moment = new_system.dofmap.dof_points()
    out = np.empty(new_system.n_dofs)
    out[~is_moment] = old_system.evaluate(u, pts[~is_moment])
    if new_system.k == 2:
        dm = new_system.dofmap
        moment_base = dm.mesh.n_nodes + dm.n_edges
        for cells, qp, qw in new_system.cell_quadrature():
            vals = old_system.evaluate(
                u, qp.reshape(-1, 2)).reshape(qw.shape)
            out[moment_base + cells] = (qw * vals).sum(axis=1) / qw.sum(axis=1)
    return out


def transfer_fields(old_system: VemSystem, new_system: VemSystem,
                    fields: FieldState) -> FieldState:
    """Carry both potential fields onto a new mesh."""
    return FieldState(
        w_plus=transfer_dof_vector(old_system, new_system, fields.w_plus),
        w_minus=transfer_dof_vector(old_system, new_system, fields.w_minus),
    )


# ---------------------------------------------------------------------------
# the adaptive driver
# ---------------------------------------------------------------------------

@dataclass
class AdaptParams:
    """Controls for the converge / estimate / adapt cycle.

    A stage (one mesh) runs the field iteration until the free energy
    settles, the iteration count reaches ``stage_max_iters``, or the
    indicator concentration ``eta_ref`` drops below
    ``eta_ref_trigger`` (checked every ``check_every`` iterations once
    ``min_stage_iters`` have run).  Marked counts are clamped to
    ``max_refine`` / ``max_coarsen`` levels per pass and ``max_level``
    total depth.  The whole run stops when consecutive stage energies
    differ by less than the field iteration's own tolerance, when a
    pass leaves the mesh unchanged, or after ``max_cycles`` stages.
    """

    theta: float = 1.0
    eta_ref_trigger: float = 0.1
    stage_max_iters: int = 500
    min_stage_iters: int = 30
    check_every: int = 5
    max_cycles: int = 40
    max_refine: int = 3
    max_coarsen: int = 2
    max_level: int = 3


@dataclass
class AdaptStage:
    """Summary of one converge-on-mesh stage."""

    cycle: int
    n_nodes: int
    n_cells: int
    n_iters: int
    h: float
    eta_ref: float
    reason: str
    marked_refine: int = 0
    marked_coarsen: int = 0


@dataclass
class AdaptiveResult:
    result: ScftResult
    mesh: PolygonMesh
    system: VemSystem
    stages: list = field(default_factory=list)
    indicator: ErrorIndicator | None = None

    @property
    def h(self) -> float:
        return self.result.h


class _StageMonitor:
    """Stop hook: fires when the indicator concentration settles."""

    def __init__(self, system, adapt: AdaptParams):
        self.system = system
        self.adapt = adapt
        self.q_end = None
        self.eta_ref = np.inf

    def __call__(self, it, props):
        self.q_end = props.q_end
        a = self.adapt
        if it >= a.stage_max_iters:
            return "stage-max-iters"
        if it < a.min_stage_iters or it % a.check_every:
            return ""
        self.eta_ref = estimate(self.system, self.q_end).eta_ref
        if self.eta_ref < a.eta_ref_trigger:
            return "eta-ref"
        return ""


def _adapt_mesh(mesh: PolygonMesh, marks: np.ndarray, adapt: AdaptParams):
    """Apply one marking pass; returns the new mesh or None if unchanged."""
    changed = False
    out = mesh
    refine_counts = np.clip(marks, 0, adapt.max_refine)
    if refine_counts.any():
        out, rmap = refine_cells(out, refine_counts,
                                 max_level=adapt.max_level)
        changed = True
        remaining = np.array([
            min(marks[src] for src in prov) for prov in rmap.provenance])
    else:
        remaining = marks.copy()
    for _ in range(adapt.max_coarsen):
        want = remaining < 0
        if not want.any():
            break
        merged, cmap = coarsen_cells(out, want)
        if merged.n_cells == out.n_cells:
            break
        next_rem = np.empty(merged.n_cells, dtype=np.int64)
        for c, prov in enumerate(cmap.provenance):
            vals = [remaining[src] for src in prov]
            next_rem[c] = min(vals) + 1 if len(prov) > 1 else \
                min(vals[0] + 1, 0) if vals[0] < 0 else vals[0]
        out, remaining = merged, next_rem
        changed = True
    return (out, changed)


def adaptive_scft(mesh: PolygonMesh, k: int, params: ScftParams,
                  adapt: AdaptParams, fields: FieldState, *,
                  trace: list | None = None, stage_prefix: str = "adapt",
                  stage_callback=None, trace_callback=None) -> AdaptiveResult:
    """Alternate field convergence with estimator-driven mesh changes.

    ``fields`` must live on the DOF layout of ``assemble(mesh, k)``.
    ``stage_callback(stage, system, result, indicator)`` runs after each
    stage; ``trace_callback`` is forwarded to the field iteration.
    """
    rows = trace if trace is not None else []
    system = assemble(mesh, k)
    stages: list[AdaptStage] = []
    stage_params = ScftParams(**{**params.__dict__,
                                 "max_iters": adapt.stage_max_iters})
    h_prev = None
    result = None
    indicator = None
    solved_mesh, solved_system = mesh, system
    for cycle in range(adapt.max_cycles):
        monitor = _StageMonitor(system, adapt)
        result = scft_iterate(system, stage_params, fields,
                              stage=f"{stage_prefix}-{cycle}", trace=rows,
                              callback=trace_callback, stop_check=monitor)
        fields = result.fields
        solved_mesh, solved_system = mesh, system
        q_end = monitor.q_end
        if q_end is None:
            q_end = solve_chain(system, fields, stage_params).q_end
        indicator = estimate(system, q_end)
        reason = "converged" if result.converged else \
            (result.stopped_by or "max-iters")
        marks = log_mark(indicator, theta=adapt.theta,
                         max_refine=adapt.max_refine,
                         max_coarsen=adapt.max_coarsen)
        stage = AdaptStage(
            cycle=cycle, n_nodes=mesh.n_nodes, n_cells=mesh.n_cells,
            n_iters=result.n_iters, h=result.h,
            eta_ref=indicator.eta_ref, reason=reason,
            marked_refine=int((marks > 0).sum()),
            marked_coarsen=int((marks < 0).sum()))
        stages.append(stage)
        if stage_callback is not None:
            stage_callback(stage, system, result, indicator)
        logger.info(
            "adapt cycle %d: %d nodes, %d iters (%s), H = %.8f, "
            "eta_ref = %.3f, marks +%d/-%d", cycle, mesh.n_nodes,
            result.n_iters, reason, result.h, indicator.eta_ref,
            stage.marked_refine, stage.marked_coarsen)
        settled = (h_prev is not None
                   and abs(result.h - h_prev) < params.hamiltonian_tol)
        h_prev = result.h
        if result.converged and settled:
            break
        new_mesh, changed = _adapt_mesh(mesh, marks, adapt)
        if not changed:
            if result.converged:
                break
            continue
        new_system = assemble(new_mesh, k)
        fields = transfer_fields(system, new_system, fields)
        mesh, system = new_mesh, new_system
    else:
        logger.warning("adaptation stopped at the cycle cap (%d) without "
                       "cross-cycle energy agreement", adapt.max_cycles)
    return AdaptiveResult(result=result, mesh=solved_mesh,
                          system=solved_system, stages=stages,
                          indicator=indicator)
