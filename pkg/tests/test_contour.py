import numpy as np
import pytest
import scipy.sparse as sp

from polyscft.chebyshev import ChebyshevGrid
from polyscft.contour import (
    BlockGrid,
    StepFactorCache,
    cn_sweep,
    collocation_residual,
    sdc_sweep,
    solve_on_grid,
    solve_propagators,
)
from polyscft.halfedge import uniform_quad_mesh
from polyscft.vem import assemble


def scalar_cache(rate=1.0):
    M = sp.csr_matrix(np.array([[1.0]]))
    K = sp.csr_matrix(np.array([[rate]]))
    return StepFactorCache(M, K)


class TestCnSweep:
    def test_zero_operator_is_identity(self):
        M = sp.identity(3, format="csr")
        K = sp.csr_matrix((3, 3))
        cache = StepFactorCache(M, K)
        traj = cn_sweep(cache, np.linspace(0, 1, 5), np.array([1.0, -2, 3]))
        assert np.allclose(traj, traj[0][None, :])

    def test_scalar_decay_second_order(self):
        errs = []
        for n in (8, 16, 32):
            cache = scalar_cache()
            traj = cn_sweep(cache, np.linspace(0, 1, n + 1), np.ones(1))
            errs.append(abs(traj[-1, 0] - np.exp(-1)))
        r1 = np.log2(errs[0] / errs[1])
        r2 = np.log2(errs[1] / errs[2])
        assert r1 == pytest.approx(2.0, abs=0.05)
        assert r2 == pytest.approx(2.0, abs=0.05)

    def test_matrix_system_vs_expm(self):
        from scipy.linalg import expm
        rng = np.random.default_rng(5)
        Q = rng.normal(size=(4, 4))
        Md = Q @ Q.T + 4 * np.eye(4)
        Kd = np.diag([0.5, 1.0, 2.0, 3.0])
        cache = StepFactorCache(sp.csr_matrix(Md), sp.csr_matrix(Kd))
        q0 = rng.normal(size=4)
        grid = ChebyshevGrid(0, 1, 32)
        traj = solve_on_grid(cache, grid, q0, sweeps=2)
        exact = expm(-np.linalg.solve(Md, Kd)) @ q0
        assert np.allclose(traj[-1], exact, atol=1e-9)

    def test_factor_cache_reuse(self):
        cache = scalar_cache()
        grid = ChebyshevGrid(0, 1, 8)
        cn_sweep(cache, grid.nodes, np.ones(1))
        # palindromic steps: only half the step sizes are distinct
        assert cache.n_factorizations == 4
        cn_sweep(cache, grid.nodes[::-1][::-1], np.ones(1))
        assert cache.n_factorizations == 4


class TestSdc:
    def test_residual_zero_at_start(self):
        cache = scalar_cache()
        grid = ChebyshevGrid(0, 1, 8)
        traj = cn_sweep(cache, grid.nodes, np.ones(1))
        gamma = collocation_residual(cache, grid, traj)
        assert abs(gamma[0, 0]) < 1e-15

    def test_residual_small_for_exact_solution(self):
        cache = scalar_cache()
        grid = ChebyshevGrid(0, 1, 16)
        traj = np.exp(-grid.nodes)[:, None]
        gamma = collocation_residual(cache, grid, traj)
        assert np.abs(gamma).max() < 1e-13

    def test_sweep_raises_order_to_four(self):
        errs = []
        for n in (4, 8, 16):
            cache = scalar_cache()
            grid = ChebyshevGrid(0, 1, n)
            traj = solve_on_grid(cache, grid, np.ones(1), sweeps=1)
            errs.append(abs(traj[-1, 0] - np.exp(-1)))
        r1 = np.log2(errs[0] / errs[1])
        r2 = np.log2(errs[1] / errs[2])
        assert r1 > 3.5
        assert r2 > 3.5

    def test_extra_sweeps_do_not_hurt(self):
        cache = scalar_cache()
        grid = ChebyshevGrid(0, 1, 16)
        t1 = solve_on_grid(cache, grid, np.ones(1), sweeps=1)
        t3 = solve_on_grid(cache, grid, np.ones(1), sweeps=3)
        e1 = abs(t1[-1, 0] - np.exp(-1))
        e3 = abs(t3[-1, 0] - np.exp(-1))
        assert e3 <= e1 * 1.01


class TestHeatProblem:
    def setup_method(self):
        mesh = uniform_quad_mesh(0, 2 * np.pi, 0, 2 * np.pi, 16, 16)
        self.sys = assemble(mesh, 2)
        self.u0 = self.sys.interpolate(
            lambda p: np.cos(p[:, 0]) * np.cos(p[:, 1]))
        self.exact = lambda p: np.exp(-1.0) * np.cos(p[:, 0]) * np.cos(p[:, 1])

    def test_sdc_reaches_spatial_floor_fast(self):
        cache = StepFactorCache(self.sys.M, 0.5 * self.sys.A)
        grid = ChebyshevGrid(0, 1, 8)
        traj = solve_on_grid(cache, grid, self.u0, sweeps=1)
        err = self.sys.l2_error(self.exact, traj[-1])
        # spatial floor for this mesh is about 1.21e-3
        assert err == pytest.approx(1.206e-3, rel=0.02)

    def test_cn_discrete_duality_exact(self):
        """Pure CN forward/backward trajectories keep q^T M qd constant."""
        rng = np.random.default_rng(2)
        w = self.sys.interpolate(
            lambda p: 0.5 + 0.3 * np.cos(p[:, 0]))
        K = 0.5 * self.sys.A + self.sys.build_cross_mass(w)
        cache = StepFactorCache(self.sys.M, K)
        grid = ChebyshevGrid(0, 1, 8)
        q = cn_sweep(cache, grid.nodes, np.ones(self.sys.n_dofs))
        rev = ChebyshevGrid(0, 1, 8)
        qd = cn_sweep(cache, rev.nodes, np.ones(self.sys.n_dofs))[::-1]
        vals = np.array([q[j] @ (self.sys.M @ qd[j])
                         for j in range(len(grid.nodes))])
        assert np.abs(vals / vals[0] - 1.0).max() < 1e-10


class TestBlockPropagators:
    def setup_method(self):
        mesh = uniform_quad_mesh(0, 4, 0, 4, 8, 8)
        self.sys = assemble(mesh, 2)
        wa = self.sys.interpolate(
            lambda p: 0.8 * np.exp(-((p[:, 0] - 2) ** 2
                                     + (p[:, 1] - 2) ** 2)))
        wb = -0.5 * wa
        self.cache_a = StepFactorCache(
            self.sys.M, self.sys.A + self.sys.build_cross_mass(wa))
        self.cache_b = StepFactorCache(
            self.sys.M, self.sys.A + self.sys.build_cross_mass(wb))

    def test_block_grid_split(self):
        bg = BlockGrid.split_evenly(0.2, 32)
        assert bg.na == bg.nb == 16
        assert bg.grid_a.nodes[0] == 0.0
        assert bg.grid_a.nodes[-1] == pytest.approx(0.2)
        assert bg.grid_b.nodes[-1] == 1.0
        assert len(bg.nodes) == 33

    def test_reflected_grids_share_steps(self):
        bg = BlockGrid(f=0.3, na=8, nb=8)
        assert np.allclose(np.sort(bg.grid_b.steps),
                           np.sort(bg.grid_b_rev.steps))
        assert np.allclose(np.sort(bg.grid_a.steps),
                           np.sort(bg.grid_a_rev.steps))

    def test_propagator_boundary_and_junction(self):
        bg = BlockGrid(f=0.4, na=6, nb=6)
        props = solve_propagators(self.cache_a, self.cache_b, bg, sweeps=1)
        n = self.sys.n_dofs
        assert np.allclose(props.q_a[0], np.ones(n))
        assert np.array_equal(props.q_a[-1], props.q_b[0])
        assert np.allclose(props.qd_b[-1], np.ones(n))
        assert np.array_equal(props.qd_a[-1], props.qd_b[0])

    def test_duality_constancy_with_sdc(self):
        bg = BlockGrid(f=0.35, na=12, nb=12)
        props = solve_propagators(self.cache_a, self.cache_b, bg, sweeps=1)
        vals = []
        for j in range(bg.na + 1):
            vals.append(props.q_a[j] @ (self.sys.M @ props.qd_a[j]))
        for j in range(bg.nb + 1):
            vals.append(props.q_b[j] @ (self.sys.M @ props.qd_b[j]))
        vals = np.array(vals) / vals[0]
        assert np.abs(vals - 1.0).max() < 1e-3

    def test_shared_factorizations(self):
        bg = BlockGrid(f=0.4, na=6, nb=6)
        solve_propagators(self.cache_a, self.cache_b, bg, sweeps=1)
        assert self.cache_a.n_factorizations == 3
        assert self.cache_b.n_factorizations == 3
