"""Chain-contour integration: Crank-Nicolson sweeps with deferred correction.

Semi-discrete problem: ``M dq/ds = -K q`` with ``K`` the sum of the scaled
stiffness and a field-weighted mass.  A variable-step Crank-Nicolson sweep
provides a second-order base trajectory on the contour nodes; spectral
deferred correction (SDC) then solves the error equation driven by the
residual of the collocation formulation, integrated spectrally on the
Chebyshev grid, raising the order by two per sweep.

LU factorizations of ``M + c K`` are cached per step coefficient ``c``;
Chebyshev step sequences are palindromic, so forward and reflected sweeps
share the same factorizations.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .chebyshev import ChebyshevGrid

logger = logging.getLogger("polyscft.contour")


class StepFactorCache:
    """LU factors of ``M + c K`` keyed by the rounded coefficient ``c``.

    Factorizations of large systems are memory hungry (tens to hundreds of
    MB each), so the cache evicts least-recently-used entries once the
    estimated held memory exceeds ``mem_budget`` bytes.  The estimate uses
    the L+U fill reported by the solver.
    """

    def __init__(self, M: sp.spmatrix, K: sp.spmatrix,
                 mem_budget: float = 2.5e9):
        self.M = M.tocsr()
        self.K = K.tocsr()
        self.mem_budget = float(mem_budget)
        self._lu: dict[str, object] = {}
        self._bytes: dict[str, float] = {}
        self.n_factorizations = 0

    @staticmethod
    def key(c: float) -> str:
        """Cache key for step coefficient ``c`` (12 significant digits)."""
        return f"{c:.12e}"

    def factor(self, c: float):
        key = self.key(c)
        lu = self._lu.get(key)
        if lu is not None:
            # refresh recency
            self._lu[key] = self._lu.pop(key)
            self._bytes[key] = self._bytes.pop(key)
            return lu
        # minimum-degree ordering on A+A^T roughly halves fill and
        # factor time versus the default column ordering for these
        # nearly-symmetric operators
        lu = splu((self.M + c * self.K).tocsc(),
                  permc_spec="MMD_AT_PLUS_A")
        self.n_factorizations += 1
        cost = 20.0 * lu.nnz
        while self._bytes and sum(self._bytes.values()) + cost \
                > self.mem_budget and len(self._lu) >= 1:
            old = next(iter(self._lu))
            del self._lu[old]
            del self._bytes[old]
        self._lu[key] = lu
        self._bytes[key] = cost
        return lu

    def held_bytes(self) -> float:
        return sum(self._bytes.values())


def distinct_step_count(*grids) -> int:
    """Number of distinct step-factor keys a march over ``grids`` needs.

    Chebyshev steps are nearly palindromic, so a grid of ``n`` steps
    usually needs about ``n / 2`` factors; counting the rounded keys
    directly also catches pairs that fail to merge by one rounding ulp.
    """
    keys: set[str] = set()
    for g in grids:
        for ds in np.diff(g.nodes):
            keys.add(StepFactorCache.key(0.5 * ds))
    return max(1, len(keys))


def cn_sweep(cache: StepFactorCache, nodes: np.ndarray, q0: np.ndarray,
             forcing: np.ndarray | None = None) -> np.ndarray:
    """March ``M dq/ds = -K q`` across ``nodes`` with Crank-Nicolson.

    ``forcing``, when given, holds one extra right-hand-side vector per
    step (shape ``(len(nodes) - 1, n)``); this is how deferred-correction
    residual increments enter the error sweep.

    Returns the trajectory, shape ``(len(nodes), n)``.
    """
    nodes = np.asarray(nodes, dtype=float)
    n_steps = len(nodes) - 1
    M, K = cache.M, cache.K
    out = np.empty((n_steps + 1, len(q0)))
    out[0] = q0
    q = np.asarray(q0, dtype=float)
    for i in range(n_steps):
        ds = nodes[i + 1] - nodes[i]
        c = 0.5 * ds
        rhs = M @ q - c * (K @ q)
        if forcing is not None:
            rhs = rhs + forcing[i]
        q = cache.factor(c).solve(rhs)
        out[i + 1] = q
    return out


def collocation_residual(cache: StepFactorCache, grid: ChebyshevGrid,
                         traj: np.ndarray) -> np.ndarray:
    """Residual ``M q(a) + int_a^s (-K q) - M q(s)`` at every node.

    The integral of the sampled right-hand side is taken spectrally with
    the grid's cumulative matrix; the first row is identically zero.
    """
    rhs = -(cache.K @ traj.T).T
    integral = grid.cumulative(rhs)
    mq = (cache.M @ traj.T).T
    return mq[0][None, :] + integral - mq


def sdc_sweep(cache: StepFactorCache, grid: ChebyshevGrid,
              traj: np.ndarray) -> np.ndarray:
    """One deferred-correction pass: solve the error equation, add it on.

    The error sweep is the same Crank-Nicolson march with zero initial
    value and the residual increments as step forcing.
    """
    gamma = collocation_residual(cache, grid, traj)
    forcing = gamma[1:] - gamma[:-1]
    err = cn_sweep(cache, grid.nodes,
                   np.zeros(traj.shape[1]), forcing=forcing)
    return traj + err


def solve_on_grid(cache: StepFactorCache, grid: ChebyshevGrid,
                  q0: np.ndarray, sweeps: int = 1) -> np.ndarray:
    """Crank-Nicolson plus ``sweeps`` deferred-correction passes."""
    traj = cn_sweep(cache, grid.nodes, q0)
    for _ in range(sweeps):
        traj = sdc_sweep(cache, grid, traj)
    return traj


# ---------------------------------------------------------------------------
# two-block chain propagators
# ---------------------------------------------------------------------------

@dataclass
class BlockGrid:
    """Per-block Chebyshev contour grids sharing the junction at ``s = f``."""

    f: float
    na: int
    nb: int

    def __post_init__(self):
        if not 0.0 < self.f < 1.0:
            raise ValueError("block fraction must lie in (0, 1)")
        self.grid_a = ChebyshevGrid(0.0, self.f, self.na)
        self.grid_b = ChebyshevGrid(self.f, 1.0, self.nb)
        # reflected grids (t = 1 - s) for the backward propagator; the
        # node sets mirror the forward ones so step factors are shared
        self.grid_b_rev = ChebyshevGrid(0.0, 1.0 - self.f, self.nb)
        self.grid_a_rev = ChebyshevGrid(1.0 - self.f, 1.0, self.na)

    @classmethod
    def split_evenly(cls, f: float, ns_total: int) -> "BlockGrid":
        if ns_total < 2:
            raise ValueError("need at least two contour segments")
        half = max(1, ns_total // 2)
        return cls(f=f, na=half, nb=half)

    @property
    def nodes(self) -> np.ndarray:
        """All contour nodes, junction listed once."""
        return np.concatenate([self.grid_a.nodes, self.grid_b.nodes[1:]])


@dataclass
class ChainPropagators:
    """Forward and backward propagators sampled on the block grids."""

    bg: BlockGrid
    q_a: np.ndarray        # forward, block A nodes, (na+1, n)
    q_b: np.ndarray        # forward, block B nodes, (nb+1, n)
    qd_a: np.ndarray       # backward, block A nodes
    qd_b: np.ndarray       # backward, block B nodes

    @property
    def q_end(self) -> np.ndarray:
        """Forward propagator at s = 1."""
        return self.q_b[-1]

    @property
    def qd_start(self) -> np.ndarray:
        """Backward propagator at s = 0."""
        return self.qd_a[0]


def solve_propagators(cache_a: StepFactorCache, cache_b: StepFactorCache,
                      bg: BlockGrid, sweeps: int = 1) -> ChainPropagators:
    """Solve forward and backward chain propagators on both blocks.

    Forward: unit initial data, block A then block B.  Backward: solved in
    the reflected coordinate t = 1 - s (unit data at s = 1), sweeping the
    reflected B block then the reflected A block, and mapped back onto the
    forward node sets.
    """
    n = cache_a.M.shape[0]
    ones = np.ones(n)

    q_a = solve_on_grid(cache_a, bg.grid_a, ones, sweeps)
    q_b = solve_on_grid(cache_b, bg.grid_b, q_a[-1], sweeps)

    t_b = solve_on_grid(cache_b, bg.grid_b_rev, ones, sweeps)
    t_a = solve_on_grid(cache_a, bg.grid_a_rev, t_b[-1], sweeps)
    qd_b = t_b[::-1]
    qd_a = t_a[::-1]

    return ChainPropagators(bg=bg, q_a=q_a, q_b=q_b, qd_a=qd_a, qd_b=qd_b)
