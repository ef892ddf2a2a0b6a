"""Experiment drivers: convergence studies and polymer production runs.

Each driver consumes a :class:`~polyscft.config.RunConfig`, writes
schema-versioned CSV tables plus mesh/field artifacts into the run's
output directory, and returns a :class:`RunReport` holding the headline
numbers so callers (CLI, tests) never have to re-parse the files.
"""

from __future__ import annotations

import dataclasses
import logging
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
from scipy import ndimage

from .chebyshev import ChebyshevGrid, fourth_order_weights
from .config import RunConfig
from .contour import StepFactorCache, solve_on_grid
from .halfedge import uniform_quad_mesh
from .meshio import write_vtu
from .restart import save_snapshot
from .scft import (
    ScftParams,
    ScftResult,
    TRACE_COLUMNS,
    scft_iterate,
)
from .adaptivity import AdaptiveResult, adaptive_scft, transfer_fields
from .vem import VemSystem, assemble

log = logging.getLogger(__name__)

CSV_SCHEMAS = {
    "heat": "heat-convergence/1",
    "endpoint": "contour-endpoint/1",
    "integral": "contour-integral/1",
    "trace": "scft-trace/1",
    "stages": "adapt-stages/1",
    "ladder": "scft-ladder/1",
}


def utc_now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="milliseconds")


class StampedRows(list):
    """Trace sink that timestamps every appended row."""

    def append(self, row):
        super().append({**row, "timestamp": utc_now()})


def write_csv(path: Path, schema: str, columns, rows):
    """Write dict rows as CSV with a leading schema-version comment."""
    import csv

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(f"# schema={schema}\n")
        writer = csv.DictWriter(fh, fieldnames=list(columns))
        writer.writeheader()
        for row in rows:
            writer.writerow({c: row.get(c, "") for c in columns})
    return path


def read_csv(path: Path):
    """Read back a schema-tagged CSV; returns (schema, rows as dicts)."""
    import csv

    with open(path) as fh:
        first = fh.readline().strip()
        schema = first.removeprefix("# schema=") if first.startswith("#") \
            else ""
        rows = list(csv.DictReader(fh))
    return schema, rows


@dataclass
class RunReport:
    """Outcome of one experiment run."""

    experiment: str
    values: dict = field(default_factory=dict)
    tables: dict = field(default_factory=dict)
    artifacts: list = field(default_factory=list)
    elapsed: float = 0.0


# ---------------------------------------------------------------------------
# shared benchmark pieces: pure-diffusion decay of a product-cosine mode
# ---------------------------------------------------------------------------

BENCH_DIFFUSION = 0.5


def bench_initial(p):
    return np.cos(p[:, 0]) * np.cos(p[:, 1])


def bench_exact(s: float):
    """Exact field at contour position s for the cosine benchmark."""
    amp = float(np.exp(-s))

    def fun(p):
        return amp * np.cos(p[:, 0]) * np.cos(p[:, 1])

    return fun


def bench_exact_integral(s: float):
    """Exact contour integral of the benchmark field over [0, s]."""
    amp = 1.0 - float(np.exp(-s))

    def fun(p):
        return amp * np.cos(p[:, 0]) * np.cos(p[:, 1])

    return fun


def bench_system(nx: int, k: int) -> VemSystem:
    mesh = uniform_quad_mesh(0.0, 2.0 * np.pi, 0.0, 2.0 * np.pi, nx, nx)
    return assemble(mesh, k)


def cn_walk(cache: StepFactorCache, dt: float, n_steps: int,
            q0: np.ndarray, weights: np.ndarray | None = None):
    """Constant-step Crank-Nicolson march keeping only the endpoint.

    With ``weights`` (length ``n_steps + 1``) the weighted sum of the
    trajectory is accumulated on the fly, so long marches never hold
    more than two DOF vectors.
    """
    q = np.asarray(q0, dtype=float)
    acc = None if weights is None else weights[0] * q
    c = 0.5 * dt
    M, K = cache.M, cache.K
    lu = cache.factor(c)
    for i in range(n_steps):
        q = lu.solve(M @ q - c * (K @ q))
        if acc is not None:
            acc += weights[i + 1] * q
    return q, acc


def empirical_orders(errors) -> list[float]:
    e = np.asarray(errors, dtype=float)
    return [float(np.log2(e[i - 1] / e[i])) for i in range(1, len(e))]


# ---------------------------------------------------------------------------
# spatial convergence study
# ---------------------------------------------------------------------------

def run_heat_convergence(cfg: RunConfig, out: Path) -> RunReport:
    """Mesh-refinement errors for the cosine decay benchmark, k = 1 and 2."""
    t0 = time.perf_counter()
    dt = cfg.heat.dt
    s_end = cfg.heat.s_end
    n_steps = int(round(s_end / dt))
    exact_end = bench_exact(s_end)
    rows = []
    values: dict = {}
    for k in (1, 2):
        errors = []
        for nx in cfg.heat.ladder:
            system = bench_system(nx, k)
            cache = StepFactorCache(system.M, BENCH_DIFFUSION * system.A)
            u0 = system.interpolate(bench_initial)
            u_end, _ = cn_walk(cache, dt, n_steps, u0)
            err = system.l2_error(exact_end, u_end)
            order = (float(np.log2(errors[-1] / err)) if errors
                     else float("nan"))
            errors.append(err)
            rows.append({
                "timestamp": utc_now(), "k": k, "nx": nx,
                "n_nodes": system.mesh.n_nodes, "n_dofs": system.n_dofs,
                "error": f"{err:.6e}",
                "order": "" if np.isnan(order) else f"{order:.4f}",
                "elapsed": f"{time.perf_counter() - t0:.2f}",
            })
            log.info("heat k=%d nx=%-4d nodes=%-6d error=%.4e order=%s",
                     k, nx, system.mesh.n_nodes, err,
                     "-" if np.isnan(order) else f"{order:.3f}")
        values[f"errors_k{k}"] = errors
        values[f"orders_k{k}"] = empirical_orders(errors)
    path = write_csv(out / "heat_convergence.csv", CSV_SCHEMAS["heat"],
                     ["timestamp", "k", "nx", "n_nodes", "n_dofs",
                      "error", "order", "elapsed"], rows)
    return RunReport("heat_convergence", values=values,
                     tables={"heat": rows}, artifacts=[str(path)],
                     elapsed=time.perf_counter() - t0)


# ---------------------------------------------------------------------------
# contour convergence studies
# ---------------------------------------------------------------------------

def _contour_setup(cfg: RunConfig):
    system = bench_system(cfg.mesh.nx, cfg.mesh.k)
    cache = StepFactorCache(system.M, BENCH_DIFFUSION * system.A)
    u0 = system.interpolate(bench_initial)
    # spatial interpolant of the exact endpoint state: the benchmark
    # decays every node value by the same factor, so the endpoint error
    # measured against this vector isolates the contour discretization
    interp_end = float(np.exp(-1.0)) * u0
    return system, cache, u0, interp_end


def run_contour_convergence(cfg: RunConfig, out: Path) -> RunReport:
    """Endpoint accuracy of plain Crank-Nicolson versus the corrected
    sweep across contour resolutions, on one fixed spatial mesh."""
    t0 = time.perf_counter()
    system, cache, u0, interp_end = _contour_setup(cfg)
    M = system.M

    def endpoint_error(u):
        d = u - interp_end
        return float(np.sqrt(max(d @ (M @ d), 0.0) / system.area))

    rows = []
    cn_errors, sdc_errors = [], []
    for ns in cfg.contour.cn_ladder:
        u_end, _ = cn_walk(cache, 1.0 / ns, ns, u0)
        cn_errors.append(endpoint_error(u_end))
    for ns in cfg.contour.sdc_ladder:
        grid = ChebyshevGrid(0.0, 1.0, ns)
        traj = solve_on_grid(cache, grid, u0, sweeps=cfg.contour.sweeps)
        sdc_errors.append(endpoint_error(traj[-1]))
    cn_orders = empirical_orders(cn_errors)
    sdc_orders = empirical_orders(sdc_errors)
    for label, ladder, errs, orders in (
            ("cn", cfg.contour.cn_ladder, cn_errors, cn_orders),
            ("sdc", cfg.contour.sdc_ladder, sdc_errors, sdc_orders)):
        for i, ns in enumerate(ladder):
            rows.append({
                "timestamp": utc_now(), "method": label, "ns": ns,
                "error": f"{errs[i]:.6e}",
                "order": f"{orders[i - 1]:.4f}" if i else "",
                "elapsed": f"{time.perf_counter() - t0:.2f}",
            })
            log.info("endpoint %-3s ns=%-4d error=%.4e order=%s", label,
                     ns, errs[i], f"{orders[i-1]:.3f}" if i else "-")
    path = write_csv(out / "contour_endpoint.csv", CSV_SCHEMAS["endpoint"],
                     ["timestamp", "method", "ns", "error", "order",
                      "elapsed"], rows)
    values = {"cn_errors": cn_errors, "cn_orders": cn_orders,
              "sdc_errors": sdc_errors, "sdc_orders": sdc_orders}
    return RunReport("contour_convergence", values=values,
                     tables={"endpoint": rows}, artifacts=[str(path)],
                     elapsed=time.perf_counter() - t0)


def run_integral_convergence(cfg: RunConfig, out: Path) -> RunReport:
    """Accuracy of the whole-contour integral: composite end-corrected
    quadrature of the stepped trajectory versus spectral quadrature of
    the corrected sweep."""
    t0 = time.perf_counter()
    system, cache, u0, _ = _contour_setup(cfg)
    exact_int = bench_exact_integral(1.0)

    rows = []
    cn_errors, sdc_errors = [], []
    for ns in cfg.contour.cn_ladder:
        w = fourth_order_weights(ns + 1, 1.0 / ns)
        _, acc = cn_walk(cache, 1.0 / ns, ns, u0, weights=w)
        cn_errors.append(system.l2_error(exact_int, acc))
    for ns in cfg.contour.sdc_ladder:
        grid = ChebyshevGrid(0.0, 1.0, ns)
        traj = solve_on_grid(cache, grid, u0, sweeps=cfg.contour.sweeps)
        sdc_errors.append(system.l2_error(exact_int, grid.weights @ traj))
    for label, ladder, errs in (("cn", cfg.contour.cn_ladder, cn_errors),
                                ("sdc", cfg.contour.sdc_ladder, sdc_errors)):
        for ns, err in zip(ladder, errs):
            rows.append({
                "timestamp": utc_now(), "method": label, "ns": ns,
                "error": f"{err:.6e}",
                "elapsed": f"{time.perf_counter() - t0:.2f}",
            })
            log.info("integral %-3s ns=%-4d error=%.4e", label, ns, err)
    path = write_csv(out / "contour_integral.csv", CSV_SCHEMAS["integral"],
                     ["timestamp", "method", "ns", "error", "elapsed"], rows)
    values = {"cn_errors": cn_errors, "sdc_errors": sdc_errors,
              "plateau": sdc_errors[-1] if sdc_errors else float("nan")}
    return RunReport("integral_convergence", values=values,
                     tables={"integral": rows}, artifacts=[str(path)],
                     elapsed=time.perf_counter() - t0)


# ---------------------------------------------------------------------------
# morphology classification
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MorphologyReport:
    n_components: int
    n_significant: int
    max_elongation: float
    median_elongation: float
    minority_fraction: float

    @property
    def label(self) -> str:
        if self.n_components == 0:
            return "uniform"
        if self.n_significant >= 2 and self.max_elongation >= 3.0:
            return "stripes"
        if self.n_significant >= 5:
            return "spots"
        return "other"


def raster_field(system: VemSystem, u: np.ndarray, n: int = 192):
    """Sample a DOF field on an n-by-n grid of cell-center points.

    Grid points outside the meshed region (holes, non-convex bites) are
    set to NaN; cell location falls back to the nearest cell, so points
    much farther from their cell's centroid than its diameter cannot be
    interior.
    """
    xy = system.mesh.xy
    x0, y0 = xy.min(axis=0)
    x1, y1 = xy.max(axis=0)
    xs = x0 + (np.arange(n) + 0.5) * (x1 - x0) / n
    ys = y0 + (np.arange(n) + 0.5) * (y1 - y0) / n
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    pts = np.column_stack([gx.ravel(), gy.ravel()])
    cells = system._locate(pts)
    vals = system.evaluate(u, pts, cells=cells)
    dist = np.linalg.norm(pts - system.cell_centroid[cells], axis=1)
    vals[dist > 1.5 * system.cell_h[cells]] = np.nan
    return vals.reshape(n, n)


def classify_morphology(system: VemSystem, phi: np.ndarray,
                        threshold: float = 0.5,
                        n: int = 192) -> MorphologyReport:
    """Connected-component shape statistics of the region phi > threshold."""
    img = raster_field(system, phi, n=n)
    with np.errstate(invalid="ignore"):
        mask = img > threshold
    labels, n_comp = ndimage.label(mask)
    min_pixels = max(16, (n * n) // 2000)
    elongations = []
    n_significant = 0
    for lab in range(1, n_comp + 1):
        coords = np.argwhere(labels == lab)
        if len(coords) < min_pixels:
            continue
        n_significant += 1
        centered = coords - coords.mean(axis=0)
        cov = centered.T @ centered / len(coords)
        evals = np.linalg.eigvalsh(cov)
        elongations.append(float(np.sqrt(evals[1] / max(evals[0], 1e-12))))
    return MorphologyReport(
        n_components=int(n_comp),
        n_significant=n_significant,
        max_elongation=max(elongations, default=0.0),
        median_elongation=float(np.median(elongations)) if elongations
        else 0.0,
        minority_fraction=float(mask.mean()),
    )


# ---------------------------------------------------------------------------
# polymer field runs
# ---------------------------------------------------------------------------

def _write_state(out: Path, name: str, system: VemSystem,
                 result: ScftResult, cfg: RunConfig, extra_meta=None):
    """Final-state artifacts: VTU snapshot plus binary restart file."""
    mesh = system.mesh
    nv = mesh.n_nodes
    point_data = {
        "phi_a": result.densities.phi_a[:nv],
        "phi_b": result.densities.phi_b[:nv],
        "w_plus": result.fields.w_plus[:nv],
        "w_minus": result.fields.w_minus[:nv],
    }
    vtu = out / f"{name}.vtu"
    write_vtu(vtu, mesh, point_data=point_data)
    meta = {
        "experiment": cfg.run.experiment, "seed": cfg.run.seed,
        "chi_n": cfg.scft.chi_n, "f": cfg.scft.f,
        "h": result.h, "big_q": result.densities.big_q,
        "converged": bool(result.converged), "n_iters": result.n_iters,
        "written": utc_now(),
    }
    if extra_meta:
        meta.update(extra_meta)
    snap = out / f"{name}.snap"
    save_snapshot(snap, mesh, system.k, {
        "w_plus": result.fields.w_plus,
        "w_minus": result.fields.w_minus,
        "phi_a": result.densities.phi_a,
        "phi_b": result.densities.phi_b,
    }, meta=meta)
    return [str(vtu), str(snap)]


def _uniform_ladder(cfg: RunConfig, params: ScftParams, trace,
                    fields=None):
    """Converge on a sequence of progressively finer uniform meshes,
    carrying the fields across by polynomial transfer."""
    ladder = cfg.scft.mesh_ladder or (cfg.mesh.nx,)
    system = None
    result = None
    for nx in ladder:
        mesh = cfg.build_mesh(nx=nx)
        new_system = assemble(mesh, cfg.mesh.k)
        if system is None:
            if fields is None:
                fields = cfg.initial_fields(new_system)
        else:
            fields = transfer_fields(system, new_system, result.fields)
        system = new_system
        log.info("uniform stage nx=%d: %d nodes, %d DOFs", nx,
                 mesh.n_nodes, system.n_dofs)
        result = scft_iterate(system, params, fields,
                              stage=f"uniform-nx{nx}", trace=trace)
        log.info("uniform stage nx=%d done: H=%.6f Q=%.4e iters=%d "
                 "converged=%s", nx, result.h, result.densities.big_q,
                 result.n_iters, result.converged)
    return system, result


def run_scft_uniform(cfg: RunConfig, out: Path) -> RunReport:
    t0 = time.perf_counter()
    trace = StampedRows()
    params = cfg.scft_params()
    system, result = _uniform_ladder(cfg, params, trace)
    artifacts = [str(write_csv(out / "trace.csv", CSV_SCHEMAS["trace"],
                               TRACE_COLUMNS + ("timestamp",), trace))]
    artifacts += _write_state(out, "state_final", system, result, cfg)
    morph = classify_morphology(system, result.densities.phi_a)
    values = {
        "h": result.h, "big_q": result.densities.big_q,
        "converged": result.converged, "n_iters": result.n_iters,
        "n_nodes": system.mesh.n_nodes, "n_dofs": system.n_dofs,
        "morphology": morph,
    }
    return RunReport("scft_uniform", values=values,
                     tables={"trace": list(trace)}, artifacts=artifacts,
                     elapsed=time.perf_counter() - t0)


def _uniform_equivalent_nodes(system: VemSystem, cfg: RunConfig) -> int:
    """Node count of the uniform mesh whose cells match the finest
    cell of an adapted mesh (quadtree cells stay square, so the side
    is the square root of the cell area)."""
    side_min = float(np.sqrt(system.cell_area.min()))
    lx = cfg.mesh.x1 - cfg.mesh.x0
    ly = cfg.mesh.y1 - cfg.mesh.y0
    return (int(round(lx / side_min)) + 1) * (int(round(ly / side_min)) + 1)


def run_scft_adaptive(cfg: RunConfig, out: Path) -> RunReport:
    t0 = time.perf_counter()
    trace = StampedRows()
    mesh = cfg.build_mesh()
    params = cfg.scft_params()
    system0 = assemble(mesh, cfg.mesh.k)
    fields = cfg.initial_fields(system0)
    adaptive = adaptive_scft(mesh, cfg.mesh.k, params, cfg.adapt_params(),
                             fields, trace=trace)
    system, result = adaptive.system, adaptive.result
    stage_rows = [{
        "timestamp": utc_now(), "cycle": st.cycle, "n_nodes": st.n_nodes,
        "n_cells": st.n_cells, "n_iters": st.n_iters,
        "h": f"{st.h:.8f}", "eta_ref": f"{st.eta_ref:.6f}",
        "reason": st.reason, "marked_refine": st.marked_refine,
        "marked_coarsen": st.marked_coarsen,
    } for st in adaptive.stages]
    artifacts = [
        str(write_csv(out / "trace.csv", CSV_SCHEMAS["trace"],
                      TRACE_COLUMNS + ("timestamp",), trace)),
        str(write_csv(out / "stages.csv", CSV_SCHEMAS["stages"],
                      ["timestamp", "cycle", "n_nodes", "n_cells",
                       "n_iters", "h", "eta_ref", "reason",
                       "marked_refine", "marked_coarsen"], stage_rows)),
    ]
    artifacts += _write_state(out, "state_final", system, result, cfg)
    morph = classify_morphology(system, result.densities.phi_a)
    values = {
        "h": result.h, "big_q": result.densities.big_q,
        "converged": result.converged,
        "n_nodes": system.mesh.n_nodes, "n_dofs": system.n_dofs,
        "n_cycles": len(adaptive.stages),
        "uniform_equivalent_nodes": _uniform_equivalent_nodes(system, cfg),
        "morphology": morph,
    }
    return RunReport("scft_adaptive", values=values,
                     tables={"trace": list(trace), "stages": stage_rows},
                     artifacts=artifacts, elapsed=time.perf_counter() - t0)


def run_scft_ladder(cfg: RunConfig, out: Path) -> RunReport:
    """Interaction-strength continuation: converge at the first value,
    then reuse each converged field state to seed the next."""
    t0 = time.perf_counter()
    rungs = cfg.scft.chi_n_ladder or (cfg.scft.chi_n,)
    trace = StampedRows()
    ladder_rows = []
    values: dict = {"h_by_chi_n": {}}
    artifacts = []
    system = result = None
    for i, chi_n in enumerate(rungs):
        params = cfg.scft_params(chi_n=chi_n)
        if i == 0:
            system, result = _uniform_ladder(cfg, params, trace)
        else:
            result = scft_iterate(system, params, result.fields,
                                  stage=f"chi{chi_n:g}", trace=trace)
        morph = classify_morphology(system, result.densities.phi_a)
        ladder_rows.append({
            "timestamp": utc_now(), "chi_n": chi_n,
            "h": f"{result.h:.8f}",
            "big_q": f"{result.densities.big_q:.6e}",
            "n_iters": result.n_iters, "converged": result.converged,
            "n_nodes": system.mesh.n_nodes,
            "morphology": morph.label,
            "elapsed": f"{time.perf_counter() - t0:.2f}",
        })
        log.info("ladder chi_n=%g: H=%.6f Q=%.4e (%s)", chi_n, result.h,
                 result.densities.big_q, morph.label)
        values["h_by_chi_n"][chi_n] = result.h
        artifacts += _write_state(out, f"state_chi{chi_n:g}", system,
                                  result, cfg, extra_meta={"chi_n": chi_n})
    values.update({
        "h": result.h, "big_q": result.densities.big_q,
        "converged": result.converged,
        "n_nodes": system.mesh.n_nodes,
    })
    artifacts.insert(0, str(write_csv(
        out / "ladder.csv", CSV_SCHEMAS["ladder"],
        ["timestamp", "chi_n", "h", "big_q", "n_iters", "converged",
         "n_nodes", "morphology", "elapsed"], ladder_rows)))
    artifacts.insert(0, str(write_csv(
        out / "trace.csv", CSV_SCHEMAS["trace"],
        TRACE_COLUMNS + ("timestamp",), trace)))
    return RunReport("scft_ladder", values=values,
                     tables={"ladder": ladder_rows, "trace": list(trace)},
                     artifacts=artifacts, elapsed=time.perf_counter() - t0)


RUNNERS = {
    "heat_convergence": run_heat_convergence,
    "contour_convergence": run_contour_convergence,
    "integral_convergence": run_integral_convergence,
    "scft_uniform": run_scft_uniform,
    "scft_adaptive": run_scft_adaptive,
    "scft_ladder": run_scft_ladder,
}


def run_experiment(cfg: RunConfig) -> RunReport:
    """Dispatch a parsed configuration to its experiment driver."""
    out = Path(cfg.run.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg.dump(out / "config.json")
    log.info("experiment %s -> %s", cfg.run.experiment, out)
    report = RUNNERS[cfg.run.experiment](cfg, out)
    report.artifacts.append(str(out / "config.json"))
    log.info("experiment %s finished in %.1f s", cfg.run.experiment,
             report.elapsed)
    return report
