"""FE-HMM micro cell problems and effective tensors.

A cell ``K = x_K + delta * (-1/2, 1/2)^2`` around a macro quadrature point is
meshed with ``n x n`` Q1 elements. For each Cartesian direction ``e_j`` the
cell solution is ``phi_j = (x - x_K) . e_j + w_j`` where the correction
``w_j`` lies in the coupling space (periodic, zero trace, or zero mean
gradient) and makes ``phi_j`` a-harmonic in the weak sense. The effective
tensor is ``A_mn = |K|^-1 int_K a grad phi_m . grad phi_n``.

Because the stiffness matrix of a 2D problem is invariant under uniform
scaling of the domain, all cells are solved on a shared reference square
with the coefficient pulled back; only the coefficient samples differ.
"""

from __future__ import annotations

import logging
import threading
import warnings
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .fe import FEFunction, FESpace, SPDSolver, assemble_stiffness, gauss_rule
from .mesh import build_uniform_quad_mesh
from .model import homogenized_diagonal, two_scale_coefficient

logger = logging.getLogger(__name__)

COUPLINGS = ("periodic", "dirichlet", "neumann")
MODES = ("frozen", "sampled")

TwoScale = Callable[[np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class CellConfig:
    """One micro problem.

    ``mode="frozen"`` evaluates ``a(x_K, x / eps)`` (slow variable fixed at the
    macro point); ``mode="sampled"`` evaluates ``a(x, x / eps)`` so the slow
    variation inside the cell contributes a modelling error.
    """

    macro_point: tuple[float, float]
    delta: float
    epsilon: float
    micro_subdivisions: int
    coupling: str = "periodic"
    mode: str = "frozen"
    coefficient: TwoScale = field(default=two_scale_coefficient, compare=True)

    def __post_init__(self):
        object.__setattr__(self, "macro_point", (float(self.macro_point[0]), float(self.macro_point[1])))
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")
        if self.delta < self.epsilon:
            raise ValueError(f"cell size delta={self.delta} is smaller than epsilon={self.epsilon}")
        if self.micro_subdivisions < 2:
            raise ValueError(f"need at least 2 micro subdivisions, got {self.micro_subdivisions}")
        if self.coupling not in COUPLINGS:
            raise ValueError(f"unknown coupling {self.coupling!r}, expected one of {COUPLINGS}")
        if self.mode not in MODES:
            raise ValueError(f"unknown coefficient mode {self.mode!r}, expected one of {MODES}")
        if self.micro_h >= self.epsilon:
            warnings.warn(
                f"micro mesh width {self.micro_h:g} does not resolve epsilon={self.epsilon:g}",
                stacklevel=3,
            )

    @property
    def micro_h(self) -> float:
        return self.delta / self.micro_subdivisions

    def at(self, point) -> CellConfig:
        """Same cell template moved to another macro point."""
        return CellConfig(
            macro_point=(float(point[0]), float(point[1])),
            delta=self.delta,
            epsilon=self.epsilon,
            micro_subdivisions=self.micro_subdivisions,
            coupling=self.coupling,
            mode=self.mode,
            coefficient=self.coefficient,
        )

    def physical_points(self, ref_points: np.ndarray) -> np.ndarray:
        return np.asarray(self.macro_point) + self.delta * (ref_points - 0.5)

    def coefficient_on_reference(self) -> Callable[[np.ndarray], np.ndarray]:
        xk = np.asarray(self.macro_point)

        def a(ref_points):
            x = self.physical_points(ref_points)
            slow = np.broadcast_to(xk, x.shape) if self.mode == "frozen" else x
            return self.coefficient(slow, x / self.epsilon)

        return a


_CONSTRAINT_OF = {"periodic": "periodic", "dirichlet": "dirichlet", "neumann": "none"}


@lru_cache(maxsize=32)
def reference_cell_space(n: int, coupling: str, pinned_dof: int = 0) -> FESpace:
    mesh = build_uniform_quad_mesh((0.0, 0.0), (1.0, 1.0), (n, n))
    return FESpace(mesh, order=1, constraint=_CONSTRAINT_OF[coupling], pinned_dof=pinned_dof)


@lru_cache(maxsize=32)
def _mean_gradient_rows(n: int) -> sp.csr_matrix:
    """Rows ``C[i, k] = int_Y d_i phi_k`` on the reference square."""
    space = reference_cell_space(n, "neumann")
    rule = gauss_rule(1)
    _, grad = space.tabulate(rule)
    w = rule.weights * space.mesh.element_area
    local = np.einsum("q,qld->dl", w, grad)
    ne = space.mesh.n_elements
    rows = np.repeat(np.arange(2), space.n_local)[None, :].repeat(ne, axis=0).ravel()
    cols = np.tile(space.element_dofs, (1, 2)).ravel()
    data = np.tile(local.ravel(), ne)
    return sp.csr_matrix((data, (rows, cols)), shape=(2, space.dof_count))


def _cell_stiffness(config: CellConfig, space: FESpace) -> sp.csr_matrix:
    return assemble_stiffness(space, config.coefficient_on_reference(), gauss_rule(2))


def _solve_corrections(config: CellConfig, pinned_dof: int = 0) -> tuple[np.ndarray, sp.csr_matrix]:
    """Both cell solutions on the reference cell, scaled by ``1 / delta``.

    Returns ``(phi, K)`` with ``phi`` of shape ``(dof_count, 2)`` holding
    ``(y - 1/2) . e_j + w_j / delta`` and ``K`` the reference stiffness.
    """
    n = config.micro_subdivisions
    space = reference_cell_space(n, config.coupling, pinned_dof)
    K = _cell_stiffness(config, space)
    lin = space.dof_coordinates - 0.5
    if config.coupling in ("periodic", "dirichlet"):
        P = space.prolongation
        Kr = (P.T @ K @ P).tocsr()
        rhs = -(P.T @ (K @ lin))
        solver = SPDSolver(Kr, method="direct")
        w = np.column_stack([solver.solve(rhs[:, j]) for j in range(2)])
        phi = lin + P @ w
    else:
        # zero mean gradient via two multipliers; one pinned dof removes constants
        C = _mean_gradient_rows(n)
        keep = np.ones(space.dof_count, dtype=bool)
        keep[pinned_dof] = False
        Kf = K[keep][:, keep]
        Cf = C[:, keep]
        saddle = sp.bmat([[Kf, Cf.T], [Cf, None]], format="csc")
        rhs = np.vstack([-(K @ lin)[keep], np.zeros((2, 2))])
        sol = spla.splu(saddle).solve(rhs)
        w = np.zeros((space.dof_count, 2))
        w[keep] = sol[: keep.sum()]
        phi = lin + w
    if not np.all(np.isfinite(phi)):
        raise FloatingPointError(f"cell problem at {config.macro_point} produced non-finite values")
    return phi, K


def solve_cell_problem(config: CellConfig, direction: int | np.ndarray, pinned_dof: int = 0) -> FEFunction:
    """Cell solution for ``e_1`` or ``e_2`` on the physical cell mesh.

    ``direction`` is an axis index (0 or 1) or the corresponding unit vector.
    """
    if not np.isscalar(direction):
        d = np.asarray(direction, dtype=float)
        if not (np.allclose(d, [1, 0]) or np.allclose(d, [0, 1])):
            raise ValueError(f"direction must be a Cartesian unit vector, got {direction}")
        direction = int(np.argmax(d))
    if direction not in (0, 1):
        raise ValueError(f"direction index must be 0 or 1, got {direction}")
    phi, _ = _solve_corrections(config, pinned_dof)
    n = config.micro_subdivisions
    mesh = build_uniform_quad_mesh(
        config.physical_points(np.zeros((1, 2)))[0], (config.delta, config.delta), (n, n)
    )
    space = FESpace(mesh, order=1, constraint=_CONSTRAINT_OF[config.coupling], pinned_dof=pinned_dof)
    return FEFunction(space, config.delta * phi[:, direction])


def homogenized_tensor_hmm(config: CellConfig, pinned_dof: int = 0) -> np.ndarray:
    phi, K = _solve_corrections(config, pinned_dof)
    # |K_delta| cancels against the delta^2 from rescaling phi
    tensor = phi.T @ (K @ phi)
    return 0.5 * (tensor + tensor.T)


def homogenized_tensor_exact(x) -> np.ndarray:
    """Closed-form homogenized tensor of the benchmark coefficient.

    Accepts a single point (returns ``(2, 2)``) or ``(N, 2)`` points.
    """
    pts = np.asarray(x, dtype=float)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    a11, a22, _ = homogenized_diagonal(pts[:, 0])
    out = np.zeros((pts.shape[0], 2, 2))
    out[:, 0, 0] = a11
    out[:, 1, 1] = a22
    return out[0] if single else out


def homogenized_tensor_reference_1d(
    x,
    quadrature_points: int = 64,
    coefficient: TwoScale = two_scale_coefficient,
) -> np.ndarray:
    """Layered-medium oracle: harmonic mean across, arithmetic mean along.

    Valid for scalar coefficients that depend on the fast variable through
    ``y1`` only. Integrates over one period with ``quadrature_points``
    composite 5-point Gauss panels.
    """
    x = np.asarray(x, dtype=float)
    gx, gw = np.polynomial.legendre.leggauss(5)
    edges = np.linspace(0.0, 1.0, quadrature_points + 1)
    mid, half = 0.5 * (edges[1:] + edges[:-1]), 0.5 * np.diff(edges)
    y1 = (mid[:, None] + half[:, None] * gx[None, :]).ravel()
    w = (half[:, None] * gw[None, :]).ravel()
    y = np.column_stack([y1, np.zeros_like(y1)])
    a = coefficient(np.broadcast_to(x, y.shape), y)[:, 0, 0]
    return np.diag([1.0 / np.sum(w / a), np.sum(w * a)])


class TensorCache:
    """Thread-safe memo of HMM tensors keyed by cell configuration.

    Racing threads may both compute the same entry; the values are identical
    so whichever insertion wins is fine.
    """

    def __init__(self):
        self._data: dict[tuple, np.ndarray] = {}
        self._lock = threading.Lock()
        self.hits = 0
        self.misses = 0

    @staticmethod
    def key(config: CellConfig) -> tuple:
        x = tuple(round(c, 14) for c in config.macro_point)
        return (
            x,
            config.delta,
            config.epsilon,
            config.micro_subdivisions,
            config.coupling,
            config.mode,
            config.coefficient,
        )

    def get(self, config: CellConfig) -> np.ndarray:
        k = self.key(config)
        with self._lock:
            hit = self._data.get(k)
            if hit is not None:
                self.hits += 1
                return hit
        value = homogenized_tensor_hmm(config)
        value.setflags(write=False)
        with self._lock:
            self.misses += 1
            return self._data.setdefault(k, value)

    def __len__(self) -> int:
        return len(self._data)

    def clear(self) -> None:
        with self._lock:
            self._data.clear()
            self.hits = self.misses = 0
