import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from polyscft.halfedge import build_from_cells, refine_cells, uniform_quad_mesh
from polyscft.vem import (
    DofMap,
    VemSystem,
    assemble,
    clear_shape_cache,
    element_shape,
    monomial_gradients,
    monomials,
    n_poly_basis,
    polygon_quadrature,
    scale_polygon,
    triangle_rule,
)

L_SHAPE = np.array([[0, 0], [2, 0], [2, 1], [1, 1], [1, 2], [0, 2]],
                   dtype=float)


def tri_moment(a, b):
    """Exact integral of x^a y^b over the reference triangle."""
    return math.factorial(a) * math.factorial(b) / math.factorial(a + b + 2)


def l_moment(a, b):
    """Exact integral of x^a y^b over the L-shaped hexagon above."""
    full = 2 ** (a + 1) / (a + 1) * 2 ** (b + 1) / (b + 1)
    cut = (2 ** (a + 1) - 1) / (a + 1) * (2 ** (b + 1) - 1) / (b + 1)
    return full - cut


@st.composite
def convex_polygon(draw):
    n = draw(st.integers(min_value=3, max_value=8))
    angles = np.sort([draw(st.floats(0.02, 2 * np.pi - 0.02))
                      for _ in range(n)])
    if np.min(np.diff(angles, append=angles[0] + 2 * np.pi)) < 0.15:
        angles = np.linspace(0, 2 * np.pi, n, endpoint=False)
    rx = draw(st.floats(0.5, 3.0))
    ry = draw(st.floats(0.5, 3.0))
    cx = draw(st.floats(-5.0, 5.0))
    cy = draw(st.floats(-5.0, 5.0))
    return np.column_stack([cx + rx * np.cos(angles),
                            cy + ry * np.sin(angles)])


class TestQuadrature:
    @pytest.mark.parametrize("degree", range(1, 9))
    def test_triangle_rule_exact(self, degree):
        pts, w = triangle_rule(degree)
        assert np.all(w > 0)
        for a in range(degree + 1):
            for b in range(degree + 1 - a):
                got = float(w @ (pts[:, 0] ** a * pts[:, 1] ** b))
                assert got == pytest.approx(tri_moment(a, b), rel=1e-13)

    @pytest.mark.parametrize("degree", [2, 4, 6])
    def test_polygon_quadrature_l_shape(self, degree):
        pts, w = polygon_quadrature(L_SHAPE, degree)
        for a in range(degree + 1):
            for b in range(degree + 1 - a):
                got = float(w @ (pts[:, 0] ** a * pts[:, 1] ** b))
                assert got == pytest.approx(l_moment(a, b), rel=1e-12)

    @settings(max_examples=40, deadline=None)
    @given(convex_polygon(), st.integers(min_value=1, max_value=6))
    def test_weights_sum_to_area(self, poly, degree):
        from polyscft.halfedge import polygon_area
        _, w = polygon_quadrature(poly, degree)
        assert w.sum() == pytest.approx(polygon_area(poly), rel=1e-12)


class TestMonomials:
    def test_basis_counts(self):
        assert n_poly_basis(1) == 3
        assert n_poly_basis(2) == 6

    def test_values_and_gradients(self):
        pts = np.array([[0.3, -0.2]])
        m = monomials(pts, 2)[0]
        assert m == pytest.approx([1.0, 0.3, -0.2, 0.09, -0.06, 0.04])
        g = monomial_gradients(pts, 2)[0]
        assert g[3] == pytest.approx([0.6, 0.0])
        assert g[4] == pytest.approx([-0.2, 0.3])
        assert g[5] == pytest.approx([0.0, -0.4])


class TestElementShape:
    @pytest.mark.parametrize("k", [1, 2])
    def test_projector_identities_square(self, k):
        _, _, vhat = scale_polygon(np.array(
            [[0, 0], [1, 0], [1, 1], [0, 1]], dtype=float))
        s = element_shape(vhat, k)
        # G is the matrix of the projector system applied to monomials
        assert np.allclose(s.B @ s.D, s.G, atol=1e-13)
        # both projectors reproduce polynomials of degree <= k
        assert np.allclose(s.pi_n @ s.D, np.eye(n_poly_basis(k)), atol=1e-12)
        assert np.allclose(s.pi_0 @ s.D, np.eye(n_poly_basis(k)), atol=1e-12)
        assert np.allclose(s.pi_n_dof @ s.D, s.D, atol=1e-12)

    @pytest.mark.parametrize("k", [1, 2])
    def test_kernel_consistency_l_shape(self, k):
        _, _, vhat = scale_polygon(L_SHAPE)
        s = element_shape(vhat, k)
        assert np.allclose(s.B @ s.D, s.G, atol=1e-13)
        assert np.allclose(s.pi_n @ s.D, np.eye(n_poly_basis(k)), atol=1e-11)

    @settings(max_examples=40, deadline=None)
    @given(convex_polygon(), st.sampled_from([1, 2]))
    def test_projector_identities_random(self, poly, k):
        _, _, vhat = scale_polygon(poly)
        s = element_shape(vhat, k)
        eye = np.eye(n_poly_basis(k))
        assert np.allclose(s.B @ s.D, s.G, atol=1e-10)
        assert np.allclose(s.pi_n @ s.D, eye, atol=1e-9)
        assert np.allclose(s.pi_0 @ s.D, eye, atol=1e-9)

    @pytest.mark.parametrize("k", [1, 2])
    def test_stabilization_vanishes_on_polynomials(self, k):
        """dof vectors of polynomials see only the consistency terms."""
        _, _, vhat = scale_polygon(L_SHAPE)
        s = element_shape(vhat, k)
        rng = np.random.default_rng(7)
        for _ in range(5):
            coef = rng.normal(size=n_poly_basis(k))
            up = s.D @ coef  # dof vector of a polynomial
            resid = up - s.pi_n_dof @ up
            assert np.linalg.norm(resid) < 1e-11
            a_full = up @ s.A @ up
            a_cons = (s.pi_n @ up) @ (s.G - np.outer(
                np.eye(len(s.G))[0] * 0, s.G[0])) @ (s.pi_n @ up)
            grad = s.pi_n @ up
            gram = s.B @ s.D
            gram = gram.copy()
            gram[0] = 0.0
            assert a_full == pytest.approx(grad @ gram @ grad, abs=1e-11)

    def test_stiffness_spd_kernel(self):
        """Stiffness is symmetric positive semidefinite, kernel = constants."""
        for k in (1, 2):
            _, _, vhat = scale_polygon(L_SHAPE)
            s = element_shape(vhat, k)
            assert np.allclose(s.A, s.A.T, atol=1e-13)
            vals = np.linalg.eigvalsh(s.A)
            assert vals[0] > -1e-12
            assert np.sum(np.abs(vals) < 1e-10) == 1
            ones = np.ones(s.ndof)
            if k == 2:
                pass  # moment dof of the constant is 1 as well
            assert np.linalg.norm(s.A @ ones) < 1e-12

    def test_shape_cache_reuse(self):
        clear_shape_cache()
        sq = np.array([[0, 0], [1, 0], [1, 1], [0, 1]], dtype=float)
        _, _, v1 = scale_polygon(sq)
        _, _, v2 = scale_polygon(3.5 * sq + np.array([2.0, -7.0]))
        s1 = element_shape(v1, 2)
        s2 = element_shape(v2, 2)
        assert s1 is s2


class TestDofMap:
    def test_counts_match_formula(self):
        mesh = uniform_quad_mesh(0, 2 * np.pi, 0, 2 * np.pi, 16, 16)
        dm1 = DofMap(mesh, 1)
        dm2 = DofMap(mesh, 2)
        assert dm1.n_dofs == 289
        assert dm2.n_edges == 544
        assert dm2.n_dofs == 289 + 544 + 256

    def test_cell_dofs_layout(self):
        mesh = uniform_quad_mesh(0, 1, 0, 1, 2, 2)
        dm = DofMap(mesh, 2)
        dofs = dm.cell_dofs(0)
        assert len(dofs) == 9
        assert len(np.unique(dofs)) == 9
        # vertex block, edge block, moment
        assert np.all(dofs[:4] < mesh.n_nodes)
        assert np.all((dofs[4:8] >= mesh.n_nodes)
                      & (dofs[4:8] < mesh.n_nodes + dm.n_edges))
        assert dofs[8] >= mesh.n_nodes + dm.n_edges

    def test_shared_edge_dof(self):
        mesh = uniform_quad_mesh(0, 1, 0, 1, 2, 1)
        dm = DofMap(mesh, 2)
        d0 = set(dm.cell_dofs(0).tolist())
        d1 = set(dm.cell_dofs(1).tolist())
        shared = d0 & d1
        # two shared vertices plus the shared edge midpoint
        assert len(shared) == 3


def poly_field(k):
    if k == 1:
        return (lambda p: 2.0 + 0.7 * p[:, 0] - 1.3 * p[:, 1],
                lambda p: np.full(len(p), 0.7 ** 2 + 1.3 ** 2))
    return (lambda p: 1.0 + p[:, 0] - 2 * p[:, 1] + 0.5 * p[:, 0] ** 2
            - p[:, 0] * p[:, 1] + 0.25 * p[:, 1] ** 2,
            None)


class TestSystem:
    @pytest.mark.parametrize("k", [1, 2])
    def test_integration_functional(self, k):
        mesh, _ = refine_cells(uniform_quad_mesh(0, 1, 0, 1, 2, 2),
                               [1, 0, 0, 1])
        sys_ = assemble(mesh, k)
        assert sys_.area == pytest.approx(1.0, rel=1e-12)
        f = sys_.interpolate(lambda p: 1 + 2 * p[:, 0] + 3 * p[:, 1])
        assert sys_.integrate(f) == pytest.approx(1 + 1 + 1.5, rel=1e-12)

    @pytest.mark.parametrize("k", [1, 2])
    def test_patch_energy(self, k):
        """Interpolated degree-k polynomials give exact energy and mass."""
        base = uniform_quad_mesh(0, 1, 0, 1, 3, 3)
        mesh, _ = refine_cells(base, [1, 0, 0, 0, 1, 0, 0, 0, 0])
        sys_ = assemble(mesh, k)
        if k == 1:
            fun = lambda p: 2.0 + 0.7 * p[:, 0] - 1.3 * p[:, 1]
            energy = 0.7 ** 2 + 1.3 ** 2
            mass = None
        else:
            fun = lambda p: (p[:, 0] ** 2 - p[:, 0] * p[:, 1]
                             + 0.5 * p[:, 1] ** 2 + p[:, 0] - 3.0)
            # grad = (2x - y + 1, -x + y); |grad|^2 over the unit square
            energy = 17.0 / 6.0  # sympy-checked, see oracle test alongside
            mass = None
        u = sys_.interpolate(fun)
        assert u @ (sys_.A @ u) == pytest.approx(energy, rel=1e-10)
        ref = sys_.l2_error(fun, u)
        assert ref < 1e-11

    def test_patch_energy_oracle(self):
        """Quadrature oracle for the quadratic patch energy above."""
        pts, w = polygon_quadrature(
            np.array([[0, 0], [1, 0], [1, 1], [0, 1]], dtype=float), 4)
        gx = 2 * pts[:, 0] - pts[:, 1] + 1
        gy = -pts[:, 0] + pts[:, 1]
        val = float(w @ (gx ** 2 + gy ** 2))
        assert val == pytest.approx(17.0 / 6.0, rel=1e-13)

    @pytest.mark.parametrize("k", [1, 2])
    def test_mass_of_polynomial(self, k):
        mesh = uniform_quad_mesh(0, 1, 0, 1, 3, 3)
        sys_ = assemble(mesh, k)
        fun = lambda p: 1.0 + p[:, 0] * (p[:, 1] if k == 2 else 1.0)
        u = sys_.interpolate(fun)
        pts, w = polygon_quadrature(
            np.array([[0, 0], [1, 0], [1, 1], [0, 1]], dtype=float),
            2 * k + 2)
        exact = float(w @ fun(pts) ** 2)
        assert u @ (sys_.M @ u) == pytest.approx(exact, rel=1e-12)
        assert u @ (sys_.Mc @ u) == pytest.approx(exact, rel=1e-12)

    @pytest.mark.parametrize("k", [1, 2])
    def test_cross_mass_constant_field(self, k):
        """With w = const the weighted mass reduces to const * Mc."""
        mesh, _ = refine_cells(uniform_quad_mesh(0, 1, 0, 1, 2, 2),
                               [0, 1, 0, 0])
        sys_ = assemble(mesh, k)
        w = np.full(sys_.n_dofs, 1.7)
        F = sys_.build_cross_mass(w)
        diff = (F - 1.7 * sys_.Mc).toarray()
        assert np.abs(diff).max() < 1e-12

    @pytest.mark.parametrize("k", [1, 2])
    def test_cross_mass_symmetry_and_linearity(self, k):
        mesh = uniform_quad_mesh(0, 1, 0, 1, 2, 2)
        sys_ = assemble(mesh, k)
        rng = np.random.default_rng(3)
        w1 = rng.normal(size=sys_.n_dofs)
        w2 = rng.normal(size=sys_.n_dofs)
        F1 = sys_.build_cross_mass(w1)
        F2 = sys_.build_cross_mass(w2)
        F12 = sys_.build_cross_mass(w1 + 0.5 * w2)
        assert np.abs((F1 - F1.T).toarray()).max() < 1e-12
        assert np.abs((F12 - F1 - 0.5 * F2).toarray()).max() < 1e-12

    @pytest.mark.parametrize("k", [1, 2])
    def test_evaluate_polynomial(self, k):
        mesh, _ = refine_cells(uniform_quad_mesh(0, 1, 0, 1, 3, 3),
                               [1, 0, 0, 0, 0, 0, 0, 0, 1])
        sys_ = assemble(mesh, k)
        fun = (lambda p: 0.5 + p[:, 0] - 2 * p[:, 1]) if k == 1 else \
            (lambda p: 0.5 + p[:, 0] * p[:, 1] - p[:, 1] ** 2)
        u = sys_.interpolate(fun)
        rng = np.random.default_rng(11)
        pts = rng.uniform(0.02, 0.98, size=(40, 2))
        vals = sys_.evaluate(u, pts)
        assert np.allclose(vals, fun(pts), atol=1e-10)

    def test_interpolation_error_shrinks(self):
        errs = {}
        for n in (4, 8, 16):
            mesh = uniform_quad_mesh(0, 1, 0, 1, n, n)
            sys_ = assemble(mesh, 1)
            fun = lambda p: np.sin(2 * p[:, 0] + 1) * np.cos(p[:, 1])
            u = sys_.interpolate(fun)
            errs[n] = sys_.l2_error(fun, u)
        assert errs[8] < 0.35 * errs[4]
        assert errs[16] < 0.35 * errs[8]

    def test_mass_scales_with_cell_size(self):
        small = assemble(uniform_quad_mesh(0, 1, 0, 1, 1, 1), 2)
        big = assemble(uniform_quad_mesh(0, 3, 0, 3, 1, 1), 2)
        assert np.allclose(big.M.toarray(), 9.0 * small.M.toarray())
        assert np.allclose(big.A.toarray(), small.A.toarray())
