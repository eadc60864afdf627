"""The damped semilinear wave benchmark on the unit square.

The homogenized problem solved by the time integrators is

    u_tt - div(a0 grad u) - beta * Laplace(u_t) + g(u_t) = f   in (0, T) x (0, 1)^2

with homogeneous Dirichlet data, where ``g`` is the odd power-law damping
``theta * ((|eta| + sigma)^gamma - sigma^gamma) * sgn(eta)``. The forcing
``f`` is manufactured from ``u(t, x) = exp(pi t) sin(pi x1^2) sin(pi x2^2)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fe import FEFunction, FESpace, interpolate_nodal

PI = np.pi


@dataclass(frozen=True)
class ProblemSpec:
    epsilon: float = 2.0**-7
    beta: float = 0.01
    theta: float = 1.0
    gamma: float = 0.6
    sigma: float = 1e-4
    T: float = 1.0
    # sgn(eta) * (|eta + sigma|^gamma - sigma^gamma) instead of the Lipschitz form
    literal_nonlinearity: bool = False
    with_nonlinearity: bool = True

    def __post_init__(self):
        if not 0 < self.gamma <= 1:
            raise ValueError(f"gamma must lie in (0, 1], got {self.gamma}")
        if self.sigma < 0:
            raise ValueError(f"sigma must be non-negative, got {self.sigma}")
        if self.epsilon <= 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")
        if self.beta < 0:
            raise ValueError(f"beta must be non-negative, got {self.beta}")
        if self.T <= 0:
            raise ValueError(f"T must be positive, got {self.T}")

    @property
    def lipschitz_constant(self) -> float:
        """Global Lipschitz bound ``gamma * |theta| / sigma^(1 - gamma)`` of the damping."""
        if self.sigma == 0 and self.gamma < 1:
            return float("inf")
        return self.gamma * abs(self.theta) / self.sigma ** (1 - self.gamma)


DEFAULT_PROBLEM = ProblemSpec()


def _as_points(x) -> np.ndarray:
    return np.atleast_2d(np.asarray(x, dtype=float))


def _scalar_to_tensor(s: np.ndarray) -> np.ndarray:
    out = np.zeros((*s.shape, 2, 2))
    out[..., 0, 0] = s
    out[..., 1, 1] = s
    return out


def two_scale_coefficient(x, y) -> np.ndarray:
    """``a(x, y) = (0.33 + 0.15 (sin 2 pi x1 + sin 2 pi y1)) I``, 1-periodic in ``y``."""
    x, y = _as_points(x), _as_points(y)
    s = 0.33 + 0.15 * (np.sin(2 * PI * x[:, 0]) + np.sin(2 * PI * y[:, 0]))
    return _scalar_to_tensor(s)


def oscillatory_coefficient(x, spec: ProblemSpec = DEFAULT_PROBLEM) -> np.ndarray:
    x = _as_points(x)
    return two_scale_coefficient(x, x / spec.epsilon)


def homogenized_diagonal(x1) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Closed-form effective diagonal ``(a11, a22)`` and ``d a11 / d x1``.

    Across the layers the effective value is the harmonic mean of
    ``c + 0.15 sin(2 pi y)`` with ``c = 0.33 + 0.15 sin(2 pi x1)``, i.e.
    ``sqrt(c^2 - 0.15^2)``; along the layers it is the arithmetic mean ``c``.
    """
    x1 = np.asarray(x1, dtype=float)
    g = 1.1 + 0.5 * np.sin(2 * PI * x1)
    root = np.sqrt(g**2 - 0.25)
    a11 = 0.3 * root
    a22 = 0.3 * g
    da11 = 0.3 * g * (PI * np.cos(2 * PI * x1)) / root
    return a11, a22, da11


def nonlinearity(eta, spec: ProblemSpec = DEFAULT_PROBLEM) -> np.ndarray:
    eta = np.asarray(eta, dtype=float)
    if not spec.with_nonlinearity:
        return np.zeros_like(eta)
    s, gm = spec.sigma, spec.gamma
    if spec.literal_nonlinearity:
        return np.sign(eta) * (np.abs(eta + s) ** gm - s**gm)
    return spec.theta * ((np.abs(eta) + s) ** gm - s**gm) * np.sign(eta)


def exact_solution(t: float, x) -> np.ndarray:
    x = _as_points(x)
    return np.exp(PI * t) * np.sin(PI * x[:, 0] ** 2) * np.sin(PI * x[:, 1] ** 2)


def exact_velocity(t: float, x) -> np.ndarray:
    return PI * exact_solution(t, x)


def exact_gradient(t: float, x) -> np.ndarray:
    x = _as_points(x)
    e = np.exp(PI * t)
    s1, s2 = np.sin(PI * x[:, 0] ** 2), np.sin(PI * x[:, 1] ** 2)
    d1 = 2 * PI * x[:, 0] * np.cos(PI * x[:, 0] ** 2)
    d2 = 2 * PI * x[:, 1] * np.cos(PI * x[:, 1] ** 2)
    return e * np.column_stack([d1 * s2, s1 * d2])


def exact_velocity_gradient(t: float, x) -> np.ndarray:
    return PI * exact_gradient(t, x)


def manufactured_rhs(
    t: float, x, spec: ProblemSpec = DEFAULT_PROBLEM, identity_tensor: bool = False
) -> np.ndarray:
    """Forcing that makes :func:`exact_solution` solve the homogenized equation."""
    x = _as_points(x)
    x1, x2 = x[:, 0], x[:, 1]
    e = np.exp(PI * t)
    s1, s2 = np.sin(PI * x1**2), np.sin(PI * x2**2)
    c1, c2 = np.cos(PI * x1**2), np.cos(PI * x2**2)
    u = e * s1 * s2
    u1 = e * 2 * PI * x1 * c1 * s2
    u11 = e * (2 * PI * c1 - 4 * PI**2 * x1**2 * s1) * s2
    u22 = e * s1 * (2 * PI * c2 - 4 * PI**2 * x2**2 * s2)

    if identity_tensor:
        a11, a22, da11 = np.ones_like(x1), np.ones_like(x1), np.zeros_like(x1)
    else:
        a11, a22, da11 = homogenized_diagonal(x1)
    div_a_grad = da11 * u1 + a11 * u11 + a22 * u22
    lap_ut = PI * (u11 + u22)
    u_t = PI * u
    u_tt = PI**2 * u
    return u_tt - div_a_grad - spec.beta * lap_ut + nonlinearity(u_t, spec)


def initial_data(space: FESpace, spec: ProblemSpec = DEFAULT_PROBLEM) -> tuple[FEFunction, FEFunction]:
    """Nodal interpolants of ``u(0)`` and ``u_t(0)`` with boundary dofs set to zero."""
    u0 = interpolate_nodal(space, lambda p: exact_solution(0.0, p))
    v0 = interpolate_nodal(space, lambda p: exact_velocity(0.0, p))
    boundary = np.array(sorted(space.dof_grid.boundary_nodes), dtype=int)
    u0.coefficients[boundary] = 0.0
    v0.coefficients[boundary] = 0.0
    return u0, v0
