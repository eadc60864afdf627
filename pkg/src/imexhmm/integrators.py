"""Midpoint-type integrators for ``M u'' + B u' + A u = G(t, u, u') + f(t)``.

Written in the half-step form with ``mu`` (displacement) and ``nu``
(velocity) coefficient vectors. All three schemes share the half step
``x_half = x_n + tau/2 (S x_? + F(x_?))`` and the full step
``x_{n+1} = x_n + tau (S x_half + F(x_half))``; they differ in where ``S``
and ``F`` are evaluated in the half step:

* ``imex``: ``S`` at ``x_half`` (implicit), ``F`` at ``x_n`` (explicit);
* ``implicit_mp``: both at ``x_half`` (fixed-point iteration);
* ``explicit_mp``: both at ``x_n``.

``G`` and ``f`` return nodal values; loads are ``M @ values``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .fe import SolverError, SPDSolver, eliminate_dirichlet

logger = logging.getLogger(__name__)

SCHEMES = ("imex", "implicit_mp", "explicit_mp")
BLOWUP = 1e150
GROWTH_LIMIT = 1e12


class DivergedError(ArithmeticError):
    """The discrete state left the finite range (blow-up)."""


@dataclass
class State:
    mu: np.ndarray
    nu: np.ndarray | None
    time: float = 0.0
    m_nu: np.ndarray | None = None  # M @ nu, carried when nu is never formed
    diverged: bool = False
    fp_iterations: int = 0


@dataclass
class Counters:
    step_solves: int = 0
    mass_solves: int = 0
    g_evals: int = 0

    def reset(self) -> None:
        self.step_solves = self.mass_solves = self.g_evals = 0


@dataclass
class SystemOperators:
    """Matrices and right-hand sides of the semi-discrete system.

    ``M``, ``A`` and ``B`` are stored with Dirichlet rows/columns eliminated
    (unit diagonal in ``M``, zero in ``A`` and ``B``), so constrained entries
    of ``mu`` and ``nu`` stay zero as long as their loads are zeroed.
    """

    M: sp.csr_matrix
    A: sp.csr_matrix
    B: sp.csr_matrix
    G: Callable[[float, np.ndarray, np.ndarray | None], np.ndarray] | None = None
    f: Callable[[float], np.ndarray] | None = None
    constrained: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    load_mass: sp.csr_matrix | None = None  # unconstrained M used for loads
    velocity_independent: bool = False
    lipschitz: float = 0.0  # of G in nu; only used to vet implicit midpoint steps
    mass_method: str = "direct"
    counters: Counters = field(default_factory=Counters)

    def __post_init__(self):
        self.constrained = np.asarray(self.constrained, dtype=int)
        if self.load_mass is None:
            self.load_mass = self.M
        self._mass_solver: SPDSolver | None = None

    @classmethod
    def from_assembled(cls, M, A, B, constrained=(), **kwargs) -> SystemOperators:
        """Eliminate ``constrained`` dofs from freshly assembled matrices."""
        constrained = np.asarray(constrained, dtype=int)
        return cls(
            M=eliminate_dirichlet(M, constrained, 1.0),
            A=eliminate_dirichlet(A, constrained, 0.0),
            B=eliminate_dirichlet(B, constrained, 0.0),
            constrained=constrained,
            load_mass=sp.csr_matrix(M),
            **kwargs,
        )

    @property
    def n(self) -> int:
        return self.M.shape[0]

    def load(self, t: float, mu: np.ndarray, nu: np.ndarray | None) -> np.ndarray:
        """``M (G(t, mu, nu) + f(t))`` with constrained rows zeroed."""
        nodal = np.zeros(self.n)
        if self.G is not None:
            self.counters.g_evals += 1
            nodal = nodal + self.G(t, mu, nu)
        if self.f is not None:
            nodal = nodal + self.f(t)
        out = self.load_mass @ nodal
        out[self.constrained] = 0.0
        return out

    def mass_solve(self, b: np.ndarray) -> np.ndarray:
        if self._mass_solver is None:
            self._mass_solver = SPDSolver(self.M, method=self.mass_method)
        self.counters.mass_solves += 1
        return self._mass_solver.solve(b)

    def velocity(self, state: State) -> np.ndarray:
        """``nu`` of a state, recovered from ``M nu`` when it was not formed."""
        if state.nu is not None:
            return state.nu
        return self.mass_solve(state.m_nu)

    def energy(self, state: State) -> float:
        nu = self.velocity(state)
        return 0.5 * float(nu @ (self.M @ nu) + state.mu @ (self.A @ state.mu))


class StepSystem:
    """Factorized ``M + tau^2/4 A + tau/2 B``, reusable for every step of size ``tau``."""

    def __init__(self, ops: SystemOperators, tau: float, method: str = "direct", tol: float = 1e-10):
        if tau <= 0:
            raise ValueError("tau must be positive")
        self.tau = tau
        self.matrix = sp.csr_matrix(ops.M + (tau**2 / 4) * ops.A + (tau / 2) * ops.B)
        self._solver = SPDSolver(self.matrix, method=method, tol=tol)
        self._ops = ops

    @property
    def cg_iterations(self) -> int:
        return self._solver.iterations

    def solve(self, b: np.ndarray) -> np.ndarray:
        self._ops.counters.step_solves += 1
        return self._solver.solve(b)


def _check_finite(state: State, limit: float = BLOWUP) -> State:
    for v in (state.mu, state.nu, state.m_nu):
        if v is None:
            continue
        if not np.all(np.isfinite(v)) or np.max(np.abs(v), initial=0.0) > limit:
            raise DivergedError(f"state blew up at t={state.time:.6g}")
    return state


def _magnitude(state: State) -> float:
    return max(
        (float(np.max(np.abs(v), initial=0.0)) for v in (state.mu, state.nu) if v is not None),
        default=0.0,
    )


def _mass_times_nu(ops: SystemOperators, state: State) -> np.ndarray:
    return state.m_nu if state.nu is None else ops.M @ state.nu


def imex_step(state: State, ops: SystemOperators, sys: StepSystem, tau: float) -> State:
    """One linearly implicit step: stiff part at the half step, ``G`` explicit.

    Costs two solves (step matrix, then mass matrix) and two ``G``
    evaluations. For velocity-independent ``G`` the mass solve is skipped
    and only ``M nu`` is propagated.
    """
    if not math.isclose(sys.tau, tau, rel_tol=1e-14):
        raise ValueError(f"step system built for tau={sys.tau}, called with {tau}")
    t, mu = state.time, state.mu
    m_nu = _mass_times_nu(ops, state)
    g_n = ops.load(t, mu, state.nu)

    nu_h = sys.solve(m_nu - (tau / 2) * (ops.A @ mu) + (tau / 2) * g_n)
    mu_h = mu + (tau / 2) * nu_h
    g_h = ops.load(t + tau / 2, mu_h, nu_h)

    m_nu_new = 2 * (ops.M @ nu_h) - m_nu + tau * (g_h - g_n)
    mu_new = mu + tau * nu_h
    if ops.velocity_independent:
        new = State(mu_new, None, t + tau, m_nu=m_nu_new)
    else:
        new = State(mu_new, ops.mass_solve(m_nu_new), t + tau)
    return _check_finite(new)


def implicit_midpoint_step(
    state: State,
    ops: SystemOperators,
    sys: StepSystem,
    tau: float,
    fp_tol: float = 1e-10,
    fp_maxit: int = 50,
) -> State:
    """Implicit midpoint rule; the half step is solved by fixed-point sweeps.

    Each sweep evaluates ``G`` at the current half-step iterate and solves
    with the step matrix. Iteration stops once successive iterates differ by
    less than ``fp_tol`` in the norm ``sqrt(dmu' A dmu + dnu' M dnu)``.
    """
    if ops.lipschitz and tau * ops.lipschitz >= 2:
        logger.warning("tau * L = %.3g >= 2: fixed-point iteration may not contract", tau * ops.lipschitz)
    t, mu = state.time, state.mu
    nu = ops.velocity(state)
    base = ops.M @ nu - (tau / 2) * (ops.A @ mu)
    t_h = t + tau / 2

    mu_h, nu_h = mu, nu
    for it in range(1, fp_maxit + 1):
        new_nu = sys.solve(base + (tau / 2) * ops.load(t_h, mu_h, nu_h))
        new_mu = mu + (tau / 2) * new_nu
        dmu, dnu = new_mu - mu_h, new_nu - nu_h
        mu_h, nu_h = new_mu, new_nu
        if ops.G is None:
            break
        diff = math.sqrt(max(dmu @ (ops.A @ dmu) + dnu @ (ops.M @ dnu), 0.0))
        if not math.isfinite(diff):
            raise DivergedError(f"fixed-point iteration blew up at t={t:.6g}")
        if diff < fp_tol:
            break
    else:
        raise SolverError(
            f"fixed-point iteration did not converge in {fp_maxit} sweeps at t={t:.6g} (last update {diff:.3e})",
            residual=diff,
            iterations=fp_maxit,
        )
    new = State(2 * mu_h - mu, 2 * nu_h - nu, t + tau, fp_iterations=it)
    return _check_finite(new)


def explicit_midpoint_step(state: State, ops: SystemOperators, tau: float) -> State:
    """Explicit midpoint rule with two mass-matrix solves per step."""
    t, mu = state.time, state.mu
    nu = ops.velocity(state)
    g_n = ops.load(t, mu, nu)
    nu_h = nu + (tau / 2) * ops.mass_solve(g_n - ops.A @ mu - ops.B @ nu)
    mu_h = mu + (tau / 2) * nu
    _check_finite(State(mu_h, nu_h, t + tau / 2))
    g_h = ops.load(t + tau / 2, mu_h, nu_h)
    nu_new = nu + tau * ops.mass_solve(g_h - ops.A @ mu_h - ops.B @ nu_h)
    mu_new = mu + tau * nu_h
    return _check_finite(State(mu_new, nu_new, t + tau))


def check_step_restriction(tau: float, c_qm_S: float) -> bool:
    """``tau * c_qm_S < 1``, the step-size condition of the IMEX error bound."""
    if c_qm_S < 0:
        raise ValueError("c_qm_S must be non-negative")
    return tau * c_qm_S < 1


def estimate_c_qm_S(ops: SystemOperators, c_G: float = 1.0, c_qm: float = 0.0) -> float:
    """``c_G / 2 * C_HV + c_qm`` with ``C_HV = sup ||v||_M / ||v||_A`` on free dofs.

    ``C_HV^2`` is the inverse of the smallest generalized eigenvalue of
    ``(A, M)``, computed by shift-invert Lanczos.
    """
    free = np.setdiff1d(np.arange(ops.n), ops.constrained)
    A = ops.A[free][:, free].tocsc()
    M = ops.M[free][:, free].tocsc()
    if A.shape[0] <= 50:
        lam_min = float(scipy.linalg.eigh(A.toarray(), M.toarray(), eigvals_only=True)[0])
    else:
        lam_min = float(spla.eigsh(A, k=1, M=M, sigma=0.0, which="LM", return_eigenvectors=False)[0])
    return 0.5 * c_G * math.sqrt(1.0 / lam_min) + c_qm


def integrate(
    scheme: str,
    initial: State,
    ops: SystemOperators,
    tau: float,
    t_end: float,
    observer: Callable[[State], None] | None = None,
    sys: StepSystem | None = None,
    fp_tol: float = 1e-10,
    fp_maxit: int = 50,
    c_qm_S: float = 0.0,
    solver: str = "direct",
    growth_limit: float = GROWTH_LIMIT,
) -> State:
    """Advance ``initial`` to ``t_end`` with uniform steps of size ``tau``.

    Divergence is not raised: the returned state then has ``diverged=True``
    and the time at which the blow-up was detected. A run counts as diverged
    once an entry is non-finite, exceeds ``BLOWUP``, or exceeds
    ``growth_limit * max(1, max|initial entry|)``. The relative test catches
    unstable runs that are too short to reach the absolute threshold.
    """
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}, expected one of {SCHEMES}")
    n_steps = round((t_end - initial.time) / tau)
    if n_steps < 0 or abs(initial.time + n_steps * tau - t_end) > 1e-12 * max(1.0, abs(t_end)):
        raise ValueError(f"t_end={t_end} is not an integer number of steps tau={tau} from t={initial.time}")
    if not check_step_restriction(tau, c_qm_S):
        logger.warning("tau=%g violates the step restriction tau * c_qm_S < 1 (c_qm_S=%g)", tau, c_qm_S)
    if scheme != "explicit_mp" and sys is None:
        sys = StepSystem(ops, tau, method=solver)

    state = initial
    if scheme == "imex" and ops.velocity_independent and state.nu is not None:
        state = State(state.mu, None, state.time, m_nu=ops.M @ state.nu)
    elif scheme != "imex" and state.nu is None:
        state = State(state.mu, ops.velocity(state), state.time)
    t0 = initial.time
    limit = min(BLOWUP, growth_limit * max(1.0, _magnitude(initial)))
    for k in range(1, n_steps + 1):
        try:
            if scheme == "imex":
                state = imex_step(state, ops, sys, tau)
            elif scheme == "implicit_mp":
                state = implicit_midpoint_step(state, ops, sys, tau, fp_tol, fp_maxit)
            else:
                state = explicit_midpoint_step(state, ops, tau)
            _check_finite(state, limit)
        except DivergedError as exc:
            logger.info("%s diverged: %s", scheme, exc)
            return replace(state, time=t0 + k * tau, diverged=True)
        # exact grid times, no accumulated rounding
        state.time = t0 + k * tau
        if observer is not None:
            observer(state)
    return state
