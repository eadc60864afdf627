import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from imexhmm.fe import SolverError
from imexhmm.integrators import (
    State,
    StepSystem,
    SystemOperators,
    check_step_restriction,
    estimate_c_qm_S,
    explicit_midpoint_step,
    imex_step,
    implicit_midpoint_step,
    integrate,
)


def scalar_ops(a=0.0, b=0.0, **kw):
    return SystemOperators(sp.csr_matrix([[1.0]]), sp.csr_matrix([[a]]), sp.csr_matrix([[b]]), **kw)


def random_spd(n, rng, shift=0.1):
    X = rng.standard_normal((n, n))
    return sp.csr_matrix(X @ X.T / n + shift * np.eye(n))


def random_ops(n, seed, damping=True, **kw):
    rng = np.random.default_rng(seed)
    B = random_spd(n, rng, 0.0) if damping else sp.csr_matrix((n, n))
    return SystemOperators(random_spd(n, rng), random_spd(n, rng), B, **kw), rng


def test_scalar_amplification_factor():
    tau, b = 0.1, 1.0
    ops = scalar_ops(b=b)
    out = imex_step(State(np.zeros(1), np.ones(1)), ops, StepSystem(ops, tau), tau)
    z = -tau * b
    assert abs(out.nu[0] - (1 + z / 2) / (1 - z / 2)) < 1e-14
    assert abs(out.nu[0] - 0.9047619047619048) < 1e-14


def test_linear_step_is_cayley_transform():
    a, b, tau = 3.0, 0.5, 0.2
    ops = scalar_ops(a, b)
    J = np.array([[0.0, 1.0], [-a, -b]])
    R = np.linalg.solve(np.eye(2) - tau / 2 * J, np.eye(2) + tau / 2 * J)
    x0 = np.array([0.7, -0.2])
    out = imex_step(State(x0[:1], x0[1:]), ops, StepSystem(ops, tau), tau)
    np.testing.assert_allclose([out.mu[0], out.nu[0]], R @ x0, atol=1e-14)


def test_explicit_amplification_and_divergence():
    tau, b = 0.1, 2.0
    ops = scalar_ops(b=b)
    z = -tau * b
    out = explicit_midpoint_step(State(np.zeros(1), np.ones(1)), ops, tau)
    assert abs(out.nu[0] - (1 + z + z**2 / 2)) < 1e-14
    final = integrate("explicit_mp", State(np.zeros(1), np.ones(1)), scalar_ops(b=1e4), 0.01, 1.0)
    assert final.diverged and final.time < 1.0


@pytest.mark.parametrize("seed", range(3))
def test_imex_energy_non_increasing(seed):
    ops, rng = random_ops(12, seed)
    tau = 0.05
    state = State(rng.standard_normal(12), rng.standard_normal(12))
    e0 = ops.energy(state)
    energies = []
    integrate("imex", state, ops, tau, 100 * tau, observer=lambda s: energies.append(ops.energy(s)))
    assert len(energies) == 100
    prev = e0
    for e in energies:
        assert e <= prev + 1e-12 * e0
        prev = e


def test_implicit_midpoint_conserves_energy():
    ops, rng = random_ops(10, 5, damping=False)
    state = State(rng.standard_normal(10), rng.standard_normal(10))
    e0 = ops.energy(state)
    final = integrate("implicit_mp", state, ops, 0.1, 20.0)
    assert abs(ops.energy(final) - e0) <= 1e-8 * e0


@pytest.mark.parametrize("velocity_independent", [False, True])
def test_imex_equals_implicit_midpoint_for_constant_forcing(velocity_independent):
    # the schemes differ only in where the load is sampled, so a time-constant load makes them identical
    n = 8
    rng = np.random.default_rng(9)
    g = rng.standard_normal(n)
    ops = SystemOperators(random_spd(n, rng), random_spd(n, rng), random_spd(n, rng, 0.0),
                          G=lambda t, mu, nu: g, f=lambda t: 2.0 * g,
                          velocity_independent=velocity_independent)
    s0 = State(rng.standard_normal(n), rng.standard_normal(n))
    a = integrate("imex", s0, ops, 0.05, 1.0)
    b = integrate("implicit_mp", s0, ops, 0.05, 1.0)
    np.testing.assert_allclose(a.mu, b.mu, atol=1e-12)
    np.testing.assert_allclose(ops.velocity(a), b.nu, atol=1e-12)


def test_counters_velocity_dependent():
    ops, rng = random_ops(6, 1, G=lambda t, mu, nu: -np.tanh(nu))
    state = State(rng.standard_normal(6), rng.standard_normal(6))
    sys = StepSystem(ops, 0.1)
    integrate("imex", state, ops, 0.1, 0.5, sys=sys)
    c = ops.counters
    assert (c.step_solves, c.mass_solves, c.g_evals) == (5, 5, 10)


def test_counters_velocity_independent_single_solve():
    ops, rng = random_ops(6, 2, G=lambda t, mu, nu: -np.tanh(mu), velocity_independent=True)
    state = State(rng.standard_normal(6), rng.standard_normal(6))
    final = integrate("imex", state, ops, 0.1, 0.5)
    c = ops.counters
    assert (c.step_solves, c.mass_solves, c.g_evals) == (5, 0, 10)
    assert final.nu is None and final.m_nu is not None
    ops.velocity(final)
    assert c.mass_solves == 1


def test_explicit_counters():
    ops, rng = random_ops(4, 3, G=lambda t, mu, nu: 0 * nu)
    integrate("explicit_mp", State(np.zeros(4), np.zeros(4)), ops, 0.01, 0.03)
    assert (ops.counters.mass_solves, ops.counters.g_evals) == (6, 6)
    ops.counters.reset()
    assert ops.counters.mass_solves == 0


@pytest.mark.parametrize("scheme", ["imex", "implicit_mp", "explicit_mp"])
def test_zero_data_stays_zero(scheme):
    ops, _ = random_ops(5, 4)
    final = integrate(scheme, State(np.zeros(5), np.zeros(5)), ops, 0.01, 0.1)
    assert np.all(final.mu == 0) and np.all(ops.velocity(final) == 0)
    assert np.isclose(final.time, 0.1)


def test_zero_steps_and_grid_check():
    ops, rng = random_ops(3, 0)
    s = State(rng.standard_normal(3), rng.standard_normal(3))
    same = integrate("imex", s, ops, 0.1, 0.0)
    np.testing.assert_array_equal(same.mu, s.mu)
    with pytest.raises(ValueError):
        integrate("imex", s, ops, 0.3, 1.0)
    with pytest.raises(ValueError):
        integrate("rk4", s, ops, 0.1, 1.0)


def test_implicit_midpoint_reports_fixed_point_failure():
    ops, rng = random_ops(4, 6, G=lambda t, mu, nu: -5 * np.sin(nu))
    with pytest.raises(SolverError):
        integrate("implicit_mp", State(rng.standard_normal(4), rng.standard_normal(4)), ops, 0.5, 0.5, fp_maxit=1)
    final = integrate("implicit_mp", State(np.ones(4), np.ones(4)), ops, 0.1, 0.1, fp_tol=1e-12)
    assert final.fp_iterations > 1


def test_dirichlet_elimination_keeps_constrained_zero():
    rng = np.random.default_rng(8)
    n = 6
    ops = SystemOperators.from_assembled(random_spd(n, rng), random_spd(n, rng), random_spd(n, rng), [0, 5],
                                         f=lambda t: np.ones(n))
    s = State(np.r_[0, rng.standard_normal(4), 0], np.zeros(n))
    for scheme in ("imex", "implicit_mp", "explicit_mp"):
        final = integrate(scheme, s, ops, 0.01, 0.1)
        assert final.mu[0] == 0 and final.mu[5] == 0 and ops.velocity(final)[[0, 5]].tolist() == [0, 0]


def test_step_restriction():
    assert check_step_restriction(0.1, 9.0)
    assert not check_step_restriction(0.1, 10.0)
    with pytest.raises(ValueError):
        check_step_restriction(0.1, -1.0)
    ops = SystemOperators(sp.identity(2, format="csr"), sp.diags([4.0, 9.0]).tocsr(), sp.csr_matrix((2, 2)))
    # smallest generalized eigenvalue 4 gives sup ||v||_M / ||v||_A = 1/2
    assert np.isclose(estimate_c_qm_S(ops, c_G=2.0, c_qm=0.1), 0.6)
    big = SystemOperators(sp.identity(80, format="csr"), sp.diags(np.arange(1.0, 81.0) ** 2).tocsr(),
                          sp.csr_matrix((80, 80)))
    assert np.isclose(estimate_c_qm_S(big), 0.5)


def test_step_restriction_violation_warns(caplog):
    ops = scalar_ops(1.0, 0.0)
    with caplog.at_level("WARNING"):
        integrate("imex", State(np.zeros(1), np.zeros(1)), ops, 0.5, 1.0, c_qm_S=5.0)
    assert "step restriction" in caplog.text


@settings(max_examples=25, deadline=None)
@given(a=st.floats(0, 100), b=st.floats(0, 100), tau=st.floats(1e-3, 1.0))
def test_imex_linear_energy_never_grows(a, b, tau):
    ops = scalar_ops(a, b)
    s = State(np.array([1.0]), np.array([-0.5]))
    out = imex_step(s, ops, StepSystem(ops, tau), tau)
    assert ops.energy(out) <= ops.energy(s) * (1 + 1e-12) + 1e-15


def test_implicit_step_matches_imex_without_nonlinearity():
    ops, rng = random_ops(5, 10)
    s = State(rng.standard_normal(5), rng.standard_normal(5))
    sys = StepSystem(ops, 0.1)
    a, b = imex_step(s, ops, sys, 0.1), implicit_midpoint_step(s, ops, sys, 0.1)
    np.testing.assert_allclose(a.mu, b.mu, atol=1e-13)
    np.testing.assert_allclose(a.nu, b.nu, atol=1e-13)
    assert b.fp_iterations == 1
