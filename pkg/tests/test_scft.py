"""Melt iteration: fixed points, closed-form limits, conservation checks.

Oracle values used here:

* homogeneous fields are exact fixed points: Q = 1, H = 0, phi_a = f;
* constant pressure c with zero exchange field gives Q = e^{-c} and
  phi_a = f (closed-form contour integrals);
* from homogeneous fields at fraction f the disordered stationary state
  has w_minus = chi_n (2f - 1)/2 and H = -chi_n (1 - 2f)^2 / 4
  (quadratic free energy in a constant exchange field);
* the partition function evaluated at contour positions {0, f, 1} agrees
  to contour accuracy (discrete duality of the stepping scheme).
"""
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from polyscft.halfedge import uniform_quad_mesh
from polyscft.scft import (
    DensityState,
    FieldState,
    ScftDivergence,
    ScftParams,
    compute_densities,
    euler_update,
    hamiltonian,
    init_fields,
    partition_function,
    partition_values,
    residual_norm,
    residuals,
    scft_iterate,
    solve_chain,
)
from polyscft.vem import assemble


def small_system(n=8, k=1, length=4.0):
    mesh = uniform_quad_mesh(0.0, length, 0.0, length, n, n)
    return assemble(mesh, k)


@pytest.fixture(scope="module")
def sys8():
    return small_system()


# ---------------------------------------------------------------------------
# trivial and closed-form states
# ---------------------------------------------------------------------------

def test_zero_fields_unit_partition(sys8):
    params = ScftParams(chi_n=20.0, f=0.5, ns=8)
    fields = init_fields(sys8, "zero")
    props = solve_chain(sys8, fields, params)
    assert abs(partition_function(sys8, props) - 1.0) < 1e-12
    # constants are in the stiffness kernel, so q stays exactly 1
    assert np.allclose(props.q_end, 1.0, atol=1e-12)


def test_zero_fields_density_is_f(sys8):
    params = ScftParams(chi_n=20.0, f=0.3, ns=8)
    fields = init_fields(sys8, "zero")
    props = solve_chain(sys8, fields, params)
    dens = compute_densities(sys8, props, partition_function(sys8, props))
    assert np.allclose(dens.phi_a, 0.3, atol=1e-12)
    assert np.allclose(dens.phi_b, 0.7, atol=1e-12)
    assert np.allclose(dens.phi_a + dens.phi_b, 1.0, atol=1e-12)


def test_zero_fields_zero_energy(sys8):
    params = ScftParams(chi_n=20.0, f=0.5, ns=8)
    fields = init_fields(sys8, "zero")
    props = solve_chain(sys8, fields, params)
    h = hamiltonian(sys8, fields, partition_function(sys8, props), params)
    assert abs(h) < 1e-12


def test_constant_pressure_partition(sys8):
    # w_plus = c, w_minus = 0: the chain sees a uniform penalty and
    # Q = e^{-c}; the density split stays exactly f.
    c = 0.4
    params = ScftParams(chi_n=20.0, f=0.3, ns=32)
    fields = FieldState(w_plus=np.full(sys8.n_dofs, c),
                        w_minus=np.zeros(sys8.n_dofs))
    props = solve_chain(sys8, fields, params)
    big_q = partition_function(sys8, props)
    assert abs(big_q - np.exp(-c)) < 5e-8
    dens = compute_densities(sys8, props, big_q)
    assert np.allclose(dens.phi_a, 0.3, atol=1e-7)


def test_half_fraction_homogeneous_is_fixed_point(sys8):
    params = ScftParams(chi_n=20.0, f=0.5, ns=8, max_iters=10)
    fields = init_fields(sys8, "zero")
    result = scft_iterate(sys8, params, fields)
    assert result.converged
    assert result.n_iters == 2       # second pass sees delta H = 0
    assert abs(result.h) < 1e-12
    assert np.allclose(result.fields.w_minus, 0.0, atol=1e-12)


def test_disordered_limit_free_energy(sys8):
    # f != 1/2 from homogeneous fields: w_minus flows to the constant
    # chi_n (2f-1)/2 and H to -chi_n (1-2f)^2 / 4 = -2.25.  The exchange
    # field reaches |w| = 7.5, so the contour grid must resolve
    # exp(-7.5 s) on the long block: ns = 64 keeps max-step * |w| < 0.3.
    params = ScftParams(chi_n=25.0, f=0.2, ns=64, max_iters=400)
    fields = init_fields(sys8, "zero")
    result = scft_iterate(sys8, params, fields)
    assert result.converged
    assert abs(result.h - (-2.25)) < 1e-3
    assert np.allclose(result.fields.w_minus, -7.5, atol=2e-2)
    assert np.allclose(result.densities.phi_a, 0.2, atol=1e-6)


# ---------------------------------------------------------------------------
# residuals and updates
# ---------------------------------------------------------------------------

def test_first_update_from_homogeneous(sys8):
    # by hand: r_minus = 2*0/chi_n - (0.2 - 0.8) = 0.6, so one Euler
    # step moves w_minus by -lambda_minus * 0.6 = -1.2.
    params = ScftParams(chi_n=25.0, f=0.2, ns=8)
    fields = init_fields(sys8, "zero")
    props = solve_chain(sys8, fields, params)
    dens = compute_densities(sys8, props, partition_function(sys8, props))
    r_plus, r_minus = residuals(fields, dens, params)
    assert np.allclose(r_plus, 0.0, atol=1e-12)
    assert np.allclose(r_minus, 0.6, atol=1e-12)
    new = euler_update(fields, r_plus, r_minus, 2.0, 2.0)
    assert np.allclose(new.w_minus, -1.2, atol=1e-12)
    assert np.allclose(new.w_plus, 0.0, atol=1e-12)


def test_zero_residuals_fix_fields(sys8):
    rng = np.random.default_rng(7)
    fields = FieldState(w_plus=rng.normal(size=sys8.n_dofs),
                        w_minus=rng.normal(size=sys8.n_dofs))
    zero = np.zeros(sys8.n_dofs)
    new = euler_update(fields, zero, zero, 2.0, 2.0)
    assert np.array_equal(new.w_plus, fields.w_plus)
    assert np.array_equal(new.w_minus, fields.w_minus)


def test_exchange_residual_algebraic_root(sys8):
    params = ScftParams(chi_n=25.0, f=0.2)
    rng = np.random.default_rng(3)
    phi_a = rng.uniform(0.1, 0.9, sys8.n_dofs)
    dens = DensityState(phi_a=phi_a, phi_b=1.0 - phi_a, big_q=1.0)
    fields = FieldState(
        w_plus=np.zeros(sys8.n_dofs),
        w_minus=0.5 * params.chi_n * (dens.phi_a - dens.phi_b))
    _, r_minus = residuals(fields, dens, params)
    assert np.allclose(r_minus, 0.0, atol=1e-12)


def test_residual_norm_of_ones(sys8):
    # domain-averaged L2 norm of the constant 1 is 1
    assert abs(residual_norm(sys8, np.ones(sys8.n_dofs)) - 1.0) < 1e-12


# ---------------------------------------------------------------------------
# partition-function consistency and guards
# ---------------------------------------------------------------------------

def test_partition_spread_small_for_rough_fields(sys8):
    params = ScftParams(chi_n=14.0, f=0.4, ns=16)
    fields = init_fields(sys8, "random", chi_n=14.0, seed=11)
    props = solve_chain(sys8, fields, params)
    vals = partition_values(sys8, props)
    spread = (vals.max() - vals.min()) / vals.mean()
    assert spread < 1e-3


def test_divergence_on_nonpositive_q(sys8):
    with pytest.raises(ScftDivergence):
        compute_densities(sys8, None, -1.0)


def test_jump_guard_halves_steps(sys8):
    params = ScftParams(chi_n=25.0, f=0.2, ns=8, max_iters=4,
                        jump_guard=1e-12)
    fields = init_fields(sys8, "zero")
    result = scft_iterate(sys8, params, fields)
    lams = [row["lambda_minus"] for row in result.trace]
    assert lams[-1] < lams[0]


def test_trace_determinism(sys8):
    params = ScftParams(chi_n=18.0, f=0.35, ns=8, max_iters=12)
    runs = []
    for _ in range(2):
        fields = init_fields(sys8, "random", chi_n=18.0, seed=5)
        result = scft_iterate(sys8, params, fields)
        runs.append([row["hamiltonian"] for row in result.trace])
    assert runs[0] == runs[1]


# ---------------------------------------------------------------------------
# field initialization modes
# ---------------------------------------------------------------------------

def test_init_modes(sys8):
    z = init_fields(sys8, "zero")
    assert not z.w_minus.any() and not z.w_plus.any()

    r = init_fields(sys8, "random", chi_n=20.0, seed=1)
    assert np.abs(r.w_minus).max() <= 1.0 + 1e-12   # eps = 0.05 * 20
    assert r.w_minus.std() > 0.1

    g = init_fields(sys8, "gaussians", bumps=[(2.0, 2.0, 0.5, 3.0)])
    pts, is_moment = sys8.dofmap.dof_points()
    center = np.argmin((pts[:, 0] - 2.0) ** 2 + (pts[:, 1] - 2.0) ** 2)
    assert g.w_minus[center] == np.abs(g.w_minus[~is_moment]).max()

    s = init_fields(sys8, "stripes", stripes=(2.0 * np.pi / 4.0, 0.0, 1.5))
    assert abs(s.w_minus[~is_moment].max() - 1.5) < 1e-6

    with pytest.raises(ValueError):
        init_fields(sys8, "nope")
    with pytest.raises(ValueError):
        init_fields(sys8, "gaussians", bumps=[])


def test_params_validation():
    with pytest.raises(ValueError):
        ScftParams(chi_n=-1.0, f=0.5)
    with pytest.raises(ValueError):
        ScftParams(chi_n=10.0, f=1.5)
    with pytest.raises(ValueError):
        ScftParams(chi_n=10.0, f=0.5, lambda_plus=0.0)
    with pytest.raises(ValueError):
        ScftParams(chi_n=10.0, f=0.5, ns=1)


# ---------------------------------------------------------------------------
# property: partition spread stays small across random smooth fields
# ---------------------------------------------------------------------------

@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 10_000),
       amp=st.floats(0.2, 2.0),
       f=st.floats(0.25, 0.75))
def test_partition_spread_property(seed, amp, f):
    sys_ = small_system(n=4)
    params = ScftParams(chi_n=10.0, f=f, ns=8)
    fields = init_fields(sys_, "random", seed=seed, eps=amp)
    props = solve_chain(sys_, fields, params)
    vals = partition_values(sys_, props)
    assert (vals.max() - vals.min()) / vals.mean() < 1e-3
