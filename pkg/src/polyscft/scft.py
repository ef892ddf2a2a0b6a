"""Mean-field iteration for an incompressible AB diblock copolymer melt.

The melt is described by a pressure field ``w_plus`` (conjugate to total
density) and an exchange field ``w_minus`` (conjugate to the A/B density
difference).  Chain statistics enter through forward/backward propagators
solved along the chain contour with the two-block scheme in
:mod:`polyscft.contour`; space is discretized by :mod:`polyscft.vem`.

One iteration of the classic saddle-point search:

1. solve the forward and backward propagators for the current fields,
2. form the single-chain partition function ``Q``, the block densities
   ``phi_a``/``phi_b`` and the free energy per chain ``H``,
3. move ``w_plus`` uphill and ``w_minus`` downhill along the respective
   first-variation residuals (explicit Euler with step sizes lambda),
4. stop when successive free-energy values differ by less than a
   tolerance.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .contour import (BlockGrid, StepFactorCache, distinct_step_count,
                      solve_propagators)
from .vem import VemSystem

logger = logging.getLogger(__name__)

TRACE_COLUMNS = (
    "iteration", "hamiltonian", "delta_h", "err_plus", "err_minus",
    "big_q", "lambda_plus", "lambda_minus", "n_nodes", "stage",
)


class ScftDivergence(RuntimeError):
    """Raised when the field iteration produces non-finite state."""


@dataclass
class ScftParams:
    """Physical and algorithmic parameters of the melt iteration.

    ``chi_n``
        Interaction strength times chain length; larger values sharpen
        the A/B interfaces.
    ``f``
        A-block fraction of the chain contour, in (0, 1).
    ``ns``
        Total number of contour segments, split evenly between blocks.
    ``sweeps``
        Deferred-correction passes per propagator solve.
    ``lambda_plus`` / ``lambda_minus``
        Explicit Euler step sizes for the two fields.
    ``hamiltonian_tol``
        Stop when |H_k - H_{k-1}| drops below this.
    ``jump_guard``
        If |H_k - H_{k-1}| exceeds this, both step sizes are halved.
    ``mem_budget``
        Total byte budget for cached step factorizations, split across
        the two block caches by their distinct step counts.
    """

    chi_n: float
    f: float
    ns: int = 100
    sweeps: int = 1
    diffusion: float = 1.0
    lambda_plus: float = 2.0
    lambda_minus: float = 2.0
    hamiltonian_tol: float = 1.0e-6
    max_iters: int = 2000
    jump_guard: float = 10.0
    mem_budget: float = 4.4e9

    def __post_init__(self):
        if self.chi_n <= 0.0:
            raise ValueError("chi_n must be positive")
        if not 0.0 < self.f < 1.0:
            raise ValueError("block fraction f must lie in (0, 1)")
        if self.lambda_plus <= 0.0 or self.lambda_minus <= 0.0:
            raise ValueError("step sizes must be positive")
        if self.ns < 2:
            raise ValueError("need at least two contour segments")

    def block_grid(self) -> BlockGrid:
        return BlockGrid.split_evenly(self.f, self.ns)


@dataclass
class FieldState:
    """Pressure and exchange fields as DOF vectors."""

    w_plus: np.ndarray
    w_minus: np.ndarray

    def copy(self) -> "FieldState":
        return FieldState(self.w_plus.copy(), self.w_minus.copy())

    def check_finite(self):
        if not (np.all(np.isfinite(self.w_plus))
                and np.all(np.isfinite(self.w_minus))):
            raise ScftDivergence("non-finite field values")


@dataclass
class DensityState:
    """Block densities and the single-chain partition function."""

    phi_a: np.ndarray
    phi_b: np.ndarray
    big_q: float


@dataclass
class ScftResult:
    fields: FieldState
    densities: DensityState
    trace: list
    h: float
    converged: bool
    n_iters: int
    stopped_by: str = ""


# ---------------------------------------------------------------------------
# field initialization
# ---------------------------------------------------------------------------

def init_fields(system: VemSystem, mode: str = "random", *,
                chi_n: float = 0.0, seed: int = 0, eps: float | None = None,
                bumps=None, stripes=None) -> FieldState:
    """Build a starting :class:`FieldState` on ``system``'s DOF layout.

    Modes
    -----
    ``zero``
        Homogeneous fields; the iteration stays at the disordered state.
    ``random``
        ``w_minus`` i.i.d. uniform in [-eps, eps] with
        ``eps = 0.05 * chi_n`` unless given; reproducible via ``seed``.
    ``gaussians``
        ``w_minus`` is a sum of Gaussian bumps; ``bumps`` is a sequence
        of ``(x, y, sigma, amplitude)`` rows.  Seeds spot patterns.
    ``stripes``
        ``w_minus = amplitude * cos(kx * x + ky * y)`` with
        ``stripes = (kx, ky, amplitude)``; several rows of three are
        summed.  Seeds lamellar patterns.

    ``w_plus`` starts at zero in every mode.
    """
    n = system.n_dofs
    w_plus = np.zeros(n)
    if mode == "zero":
        w_minus = np.zeros(n)
    elif mode == "random":
        amp = 0.05 * chi_n if eps is None else float(eps)
        rng = np.random.default_rng(seed)
        w_minus = rng.uniform(-amp, amp, size=n)
    elif mode == "gaussians":
        if bumps is None or len(bumps) == 0:
            raise ValueError("gaussians mode needs a non-empty bump list")
        rows = [tuple(map(float, b)) for b in bumps]

        def fun(p):
            out = np.zeros(len(p))
            for x0, y0, sigma, amp in rows:
                d2 = (p[:, 0] - x0) ** 2 + (p[:, 1] - y0) ** 2
                out += amp * np.exp(-d2 / (2.0 * sigma * sigma))
            return out

        w_minus = system.interpolate(fun)
    elif mode == "stripes":
        if stripes is None:
            raise ValueError("stripes mode needs (kx, ky, amplitude)")
        waves = np.atleast_2d(np.asarray(stripes, dtype=float))
        if waves.size == 0 or waves.shape[1] != 3:
            raise ValueError("stripes rows must be (kx, ky, amplitude)")

        def fun(p):
            out = np.zeros(len(p))
            for kx, ky, amp in waves:
                out += amp * np.cos(kx * p[:, 0] + ky * p[:, 1])
            return out

        w_minus = system.interpolate(fun)
    else:
        raise ValueError(f"unknown field init mode {mode!r}")
    return FieldState(w_plus=w_plus, w_minus=w_minus)


# ---------------------------------------------------------------------------
# one-iteration building blocks
# ---------------------------------------------------------------------------

def block_operators(system: VemSystem, fields: FieldState,
                    diffusion: float = 1.0):
    """Spatial operators ``diffusion*A + (w .,.)`` for the two blocks.

    Block A feels ``w_plus - w_minus``; block B feels
    ``w_plus + w_minus``.
    """
    w_a = fields.w_plus - fields.w_minus
    w_b = fields.w_plus + fields.w_minus
    k_a = diffusion * system.A + system.build_cross_mass(w_a)
    k_b = diffusion * system.A + system.build_cross_mass(w_b)
    return k_a, k_b


def solve_chain(system: VemSystem, fields: FieldState, params: ScftParams):
    """Solve both propagators for the current fields.

    Factor caches are created per call and released afterwards, since the
    operators change with the fields on every iteration.  The memory
    budget is split by each block's distinct step count (palindromic
    grids reuse mirrored steps), so neither cache thrashes while the
    other sits under-used.
    """
    k_a, k_b = block_operators(system, fields, params.diffusion)
    bg = params.block_grid()
    need_a = distinct_step_count(bg.grid_a, bg.grid_a_rev)
    need_b = distinct_step_count(bg.grid_b, bg.grid_b_rev)
    share = params.mem_budget / (need_a + need_b)
    cache_a = StepFactorCache(system.M, k_a, mem_budget=share * need_a)
    cache_b = StepFactorCache(system.M, k_b, mem_budget=share * need_b)
    return solve_propagators(cache_a, cache_b, bg,
                             sweeps=params.sweeps)


def partition_function(system: VemSystem, props) -> float:
    """``Q`` evaluated at the chain end, where the backward weight is 1."""
    return float(system.ell @ props.q_end) / system.area


def partition_values(system: VemSystem, props) -> np.ndarray:
    """``Q`` evaluated at contour positions 0, f and 1.

    The three values agree up to contour discretization error; their
    spread is a solver health check.
    """
    m = system.M
    q0 = float(system.ell @ props.qd_start)
    qf = float(props.q_a[-1] @ (m @ props.qd_a[-1]))
    q1 = float(system.ell @ props.q_end)
    return np.array([q0, qf, q1]) / system.area


def compute_densities(system: VemSystem, props, big_q: float) -> DensityState:
    """Contour integrals of the DOF-wise propagator products, over Q."""
    if big_q <= 0.0 or not np.isfinite(big_q):
        raise ScftDivergence(f"partition function Q = {big_q!r}")
    bg = props.bg
    prod_a = props.q_a * props.qd_a
    prod_b = props.q_b * props.qd_b
    phi_a = np.tensordot(bg.grid_a.weights, prod_a, axes=(0, 0)) / big_q
    phi_b = np.tensordot(bg.grid_b.weights, prod_b, axes=(0, 0)) / big_q
    return DensityState(phi_a=phi_a, phi_b=phi_b, big_q=big_q)


def hamiltonian(system: VemSystem, fields: FieldState, big_q: float,
                params: ScftParams) -> float:
    """Free energy per chain of the current field configuration.

    The exchange-field square is integrated through the projected
    (consistency-only) mass so the quadratic term matches the element
    polynomial projections.
    """
    lin = -float(system.ell @ fields.w_plus)
    quad = float(fields.w_minus @ (system.Mc @ fields.w_minus)) / params.chi_n
    return (lin + quad) / system.area - float(np.log(big_q))


def residuals(fields: FieldState, densities: DensityState,
              params: ScftParams):
    """First-variation residuals of the free energy (per DOF)."""
    r_plus = densities.phi_a + densities.phi_b - 1.0
    r_minus = 2.0 * fields.w_minus / params.chi_n \
        - (densities.phi_a - densities.phi_b)
    return r_plus, r_minus


def residual_norm(system: VemSystem, r: np.ndarray) -> float:
    """Domain-averaged L2 norm of a DOF residual vector."""
    return float(np.sqrt(max(r @ (system.M @ r), 0.0) / system.area))


def euler_update(fields: FieldState, r_plus: np.ndarray, r_minus: np.ndarray,
                 lambda_plus: float, lambda_minus: float) -> FieldState:
    """Move ``w_plus`` uphill and ``w_minus`` downhill along the residuals."""
    return FieldState(
        w_plus=fields.w_plus + lambda_plus * r_plus,
        w_minus=fields.w_minus - lambda_minus * r_minus,
    )


# ---------------------------------------------------------------------------
# the iteration loop
# ---------------------------------------------------------------------------

def scft_iterate(system: VemSystem, params: ScftParams, fields: FieldState,
                 *, stage: str = "", trace: list | None = None,
                 callback=None, stop_check=None) -> ScftResult:
    """Iterate fields to a free-energy stationary point.

    Appends one row per iteration to ``trace`` (a list of dicts with
    :data:`TRACE_COLUMNS` keys) and calls ``callback(row)`` after each
    append.  ``stop_check(iteration, props)``, when given, may return a
    non-empty string to end the loop early (recorded in ``stopped_by``);
    the adaptive driver uses this to trigger mesh adaptation.  Raises
    :class:`ScftDivergence` on non-finite state.  When successive free
    energies jump by more than ``params.jump_guard``, both step sizes
    are halved for the remaining iterations.
    """
    rows = trace if trace is not None else []
    lam_p = params.lambda_plus
    lam_m = params.lambda_minus
    n_nodes = system.mesh.n_nodes
    h_prev = np.nan
    fields = fields.copy()
    fields.check_finite()
    densities = None
    converged = False
    stopped_by = ""
    it = 0
    for it in range(1, params.max_iters + 1):
        props = solve_chain(system, fields, params)
        big_q = partition_function(system, props)
        densities = compute_densities(system, props, big_q)
        h = hamiltonian(system, fields, big_q, params)
        if not np.isfinite(h):
            raise ScftDivergence(f"non-finite free energy at iteration {it}")
        r_plus, r_minus = residuals(fields, densities, params)
        dh = h - h_prev
        row = {
            "iteration": it,
            "hamiltonian": h,
            "delta_h": dh,
            "err_plus": residual_norm(system, r_plus),
            "err_minus": residual_norm(system, r_minus),
            "big_q": big_q,
            "lambda_plus": lam_p,
            "lambda_minus": lam_m,
            "n_nodes": n_nodes,
            "stage": stage,
        }
        rows.append(row)
        if callback is not None:
            callback(row)
        if np.isfinite(dh) and abs(dh) < params.hamiltonian_tol:
            converged = True
            h_prev = h
            break
        if stop_check is not None:
            reason = stop_check(it, props)
            if reason:
                stopped_by = str(reason)
                h_prev = h
                break
        if np.isfinite(dh) and abs(dh) > params.jump_guard:
            lam_p *= 0.5
            lam_m *= 0.5
            logger.warning(
                "free-energy jump %.3g at iteration %d; halving step "
                "sizes to (%.3g, %.3g)", dh, it, lam_p, lam_m)
        h_prev = h
        fields = euler_update(fields, r_plus, r_minus, lam_p, lam_m)
        fields.check_finite()
    if densities is None:
        raise ScftDivergence("iteration loop made no progress")
    logger.info("stage %r: %s after %d iterations, H = %.8f",
                stage or "-", "converged" if converged else "stopped",
                it, h_prev)
    return ScftResult(fields=fields, densities=densities, trace=rows,
                      h=float(h_prev), converged=converged, n_iters=it,
                      stopped_by=stopped_by)
