import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from imexhmm.fe import (
    FEFunction,
    FESpace,
    SolverError,
    SPDSolver,
    assemble_load,
    assemble_mass,
    assemble_stiffness,
    dirichlet_rhs,
    eliminate_dirichlet,
    error_norms,
    gauss_rule,
    interpolate_nodal,
    pcg,
    shape_functions,
)
from imexhmm.mesh import build_uniform_quad_mesh


def unit_space(n=1, order=1, constraint="none"):
    return FESpace(build_uniform_quad_mesh((0, 0), (1, 1), (n, n)), order, constraint)


def test_gauss_two_point_nodes():
    r = gauss_rule(2)
    a, b = 0.5 - 1 / (2 * np.sqrt(3)), 0.5 + 1 / (2 * np.sqrt(3))
    np.testing.assert_allclose(np.sort(np.unique(r.points[:, 0])), [a, b], atol=1e-15)
    np.testing.assert_allclose(r.weights, 0.25)
    assert np.isclose(r.weights @ (r.points[:, 0] ** 2 * r.points[:, 1] ** 2), 1 / 9, atol=1e-15)


@pytest.mark.parametrize("n", [1, 2, 3, 4, 5])
def test_gauss_exact_degree(n):
    r = gauss_rule(n)
    k = 2 * n - 1
    assert np.isclose(r.weights @ (r.points[:, 0] ** k * r.points[:, 1] ** k), 1 / (k + 1) ** 2)


@pytest.mark.parametrize("order", [1, 2])
def test_shape_partition_of_unity(order):
    pts = np.random.default_rng(0).random((7, 2))
    val, grad = shape_functions(order, pts)
    np.testing.assert_allclose(val.sum(axis=1), 1.0, atol=1e-14)
    np.testing.assert_allclose(grad.sum(axis=1), 0.0, atol=1e-13)


def test_q1_element_matrices():
    s = unit_space()
    M = assemble_mass(s).toarray()
    K = assemble_stiffness(s, 1.0).toarray()
    # node 3 is the corner opposite node 0
    np.testing.assert_allclose([M[0, 0], M[0, 1], M[0, 2], M[0, 3]], [1 / 9, 1 / 18, 1 / 18, 1 / 36], atol=1e-15)
    np.testing.assert_allclose([K[0, 0], K[0, 1], K[0, 2], K[0, 3]], [2 / 3, -1 / 6, -1 / 6, -1 / 3], atol=1e-15)


@pytest.mark.parametrize("order", [1, 2])
def test_stiffness_kernel_symmetry_linearity(order):
    s = unit_space(3, order)
    K = assemble_stiffness(s, lambda p: np.broadcast_to(np.diag([1.0, 2.0]), (len(p), 2, 2)))
    np.testing.assert_allclose(K @ np.ones(s.dof_count), 0.0, atol=1e-12)
    assert abs(K - K.T).max() < 1e-14
    np.testing.assert_allclose(assemble_stiffness(s, 5.0).toarray(), 5 * assemble_stiffness(s, 1.0).toarray(), atol=1e-13)
    M = assemble_mass(s)
    assert np.isclose(M.sum(), 1.0)
    assert np.linalg.eigvalsh(M.toarray()).min() > 0


def test_stiffness_rejects_non_finite():
    with pytest.raises(FloatingPointError):
        assemble_stiffness(unit_space(2), np.nan)


def test_dirichlet_elimination_spd_and_rhs():
    s = unit_space(4, 1, "dirichlet")
    K = assemble_stiffness(s, 1.0)
    Ke = eliminate_dirichlet(K, s.constrained_dofs)
    assert np.linalg.eigvalsh(Ke.toarray()).min() > 0
    b = dirichlet_rhs(K, np.zeros(s.dof_count), s.constrained_dofs, 1.0)
    x = sp.linalg.spsolve(Ke.tocsc(), b)
    # harmonic extension of a constant is that constant
    np.testing.assert_allclose(x, 1.0, atol=1e-12)


def test_load_consistency():
    s = unit_space(3, 2)
    f = interpolate_nodal(s, lambda p: 1.0 + p[:, 0])
    assert np.isclose(assemble_load(s, f.coefficients).sum(), 1.5)
    with pytest.raises(ValueError):
        assemble_load(s, np.zeros(3))


@pytest.mark.parametrize("order", [1, 2])
def test_interpolation_reproduces_polynomials(order):
    s = unit_space(2, order)
    g = (lambda p: 1 + 2 * p[:, 0] - p[:, 1] + 3 * p[:, 0] * p[:, 1]) if order == 1 else (
        lambda p: p[:, 0] ** 2 * p[:, 1] ** 2 - p[:, 1] ** 2)
    grad = (lambda p: np.column_stack([2 + 3 * p[:, 1], -1 + 3 * p[:, 0]])) if order == 1 else (
        lambda p: np.column_stack([2 * p[:, 0] * p[:, 1] ** 2, 2 * p[:, 0] ** 2 * p[:, 1] - 2 * p[:, 1]]))
    l2, h1 = error_norms(interpolate_nodal(s, g), g, grad)
    assert l2 < 1e-13 and h1 < 1e-13


def test_interpolate_rejects_nan():
    with pytest.raises(FloatingPointError):
        interpolate_nodal(unit_space(2), lambda p: np.where(p[:, 0] > 0.6, np.nan, 0.0))


@pytest.mark.parametrize("order, expected", [(1, (2.0, 1.0)), (2, (3.0, 2.0))])
def test_interpolation_error_rates(order, expected):
    u = lambda p: np.sin(np.pi * p[:, 0]) * np.sin(np.pi * p[:, 1])
    du = lambda p: np.pi * np.column_stack([
        np.cos(np.pi * p[:, 0]) * np.sin(np.pi * p[:, 1]), np.sin(np.pi * p[:, 0]) * np.cos(np.pi * p[:, 1])])
    errs = [error_norms(interpolate_nodal(unit_space(n, order), u), u, du) for n in (8, 16)]
    rates = np.log2(np.array(errs[0]) / np.array(errs[1]))
    np.testing.assert_allclose(rates, expected, atol=0.1)


def test_error_norms_of_zero_function():
    s = unit_space(4)
    l2, h1 = error_norms(FEFunction(s, np.zeros(s.dof_count)), lambda p: np.ones(len(p)), None)
    assert np.isclose(l2, 1.0) and h1 == 0.0


def test_pcg_matches_dense_solve():
    s = unit_space(5, 1, "dirichlet")
    A = eliminate_dirichlet(assemble_stiffness(s, 1.0), s.constrained_dofs)
    b = np.random.default_rng(1).standard_normal(s.dof_count)
    x, its = pcg(A, b, tol=1e-12)
    np.testing.assert_allclose(x, np.linalg.solve(A.toarray(), b), atol=1e-10)
    assert 0 < its <= s.dof_count


def test_pcg_reports_non_convergence():
    A = sp.csr_matrix(np.diag(np.linspace(1, 1e6, 50)) + np.ones((50, 50)))
    with pytest.raises(SolverError) as err:
        pcg(A, np.ones(50), maxiter=2)
    assert err.value.iterations == 2


def test_spd_solver_methods_agree():
    s = unit_space(4, 2, "dirichlet")
    A = eliminate_dirichlet(assemble_stiffness(s, 1.0) + assemble_mass(s), s.constrained_dofs)
    b = np.arange(s.dof_count, dtype=float)
    direct, cg = SPDSolver(A), SPDSolver(A, "cg", tol=1e-13)
    np.testing.assert_allclose(cg.solve(b), direct.solve(b), atol=1e-9)
    assert cg.iterations > 0 and direct.calls == 1


@settings(max_examples=25, deadline=None)
@given(
    n=st.integers(1, 4),
    order=st.sampled_from([1, 2]),
    c=st.floats(0.1, 10),
    seed=st.integers(0, 2**16),
)
def test_stiffness_is_psd_and_scales(n, order, c, seed):
    s = unit_space(n, order)
    K = assemble_stiffness(s, c).toarray()
    v = np.random.default_rng(seed).standard_normal(s.dof_count)
    assert v @ K @ v >= -1e-10
    np.testing.assert_allclose(K, c * assemble_stiffness(s, 1.0).toarray(), atol=1e-12 * c)
