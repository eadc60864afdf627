"""Q1/Q2 Lagrange finite elements on uniform quadrilateral meshes.

Everything here exploits the uniform geometry: the reference-to-physical
map is the same diagonal scaling on every element, so shape-function
tables are computed once per space and all element loops are ``einsum``
contractions over stacked element arrays.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import cached_property
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .mesh import Mesh, build_uniform_quad_mesh

logger = logging.getLogger(__name__)

CONSTRAINTS = ("none", "dirichlet", "periodic")


class SolverError(RuntimeError):
    """A linear or nonlinear solve failed to reach its tolerance."""

    def __init__(self, message: str, residual: float = float("nan"), iterations: int = 0):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


@dataclass(frozen=True)
class QuadratureRule:
    """Tensor-product rule on the reference square ``[0, 1]^2``."""

    points: np.ndarray
    weights: np.ndarray
    degree: int  # exact for polynomials of this degree in each variable

    @property
    def n_points(self) -> int:
        return self.weights.size


def gauss_rule(points_per_axis: int) -> QuadratureRule:
    if not 1 <= points_per_axis <= 5:
        raise ValueError(f"points_per_axis must be in 1..5, got {points_per_axis}")
    x, w = np.polynomial.legendre.leggauss(points_per_axis)
    x = 0.5 * (x + 1.0)
    w = 0.5 * w
    X1, X2 = np.meshgrid(x, x, indexing="xy")
    W = np.outer(w, w)  # W[j, i] belongs to point (x[i], x[j])
    points = np.column_stack([X1.ravel(), X2.ravel()])
    return QuadratureRule(points=points, weights=W.ravel(), degree=2 * points_per_axis - 1)


def _lagrange_1d(order: int, t: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Values and derivatives of the 1D Lagrange basis at ``t``."""
    if order == 1:
        val = np.stack([1.0 - t, t], axis=-1)
        der = np.stack([-np.ones_like(t), np.ones_like(t)], axis=-1)
    elif order == 2:
        val = np.stack([(1 - t) * (1 - 2 * t), 4 * t * (1 - t), t * (2 * t - 1)], axis=-1)
        der = np.stack([4 * t - 3, 4 - 8 * t, 4 * t - 1], axis=-1)
    else:
        raise ValueError(f"order must be 1 or 2, got {order}")
    return val, der


def shape_functions(order: int, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Tensor-product shape functions on the reference square.

    Local dof ``b * (order + 1) + c`` is the node with x1-index ``c`` and
    x2-index ``b``. Returns values ``(nq, nloc)`` and reference gradients
    ``(nq, nloc, 2)``.
    """
    points = np.atleast_2d(points)
    v1, d1 = _lagrange_1d(order, points[:, 0])
    v2, d2 = _lagrange_1d(order, points[:, 1])
    nq = points.shape[0]
    val = (v2[:, :, None] * v1[:, None, :]).reshape(nq, -1)
    g1 = (v2[:, :, None] * d1[:, None, :]).reshape(nq, -1)
    g2 = (d2[:, :, None] * v1[:, None, :]).reshape(nq, -1)
    return val, np.stack([g1, g2], axis=-1)


class FESpace:
    """Continuous Q1 or Q2 space on a uniform mesh.

    ``constraint`` selects which dofs are eliminated: the boundary
    (``"dirichlet"``), the max-face copies plus one pinned master
    (``"periodic"``), or nothing (``"none"``).
    """

    def __init__(self, mesh: Mesh, order: int = 1, constraint: str = "none", pinned_dof: int = 0):
        if order not in (1, 2):
            raise ValueError(f"order must be 1 or 2, got {order}")
        if constraint not in CONSTRAINTS:
            raise ValueError(f"unknown constraint {constraint!r}")
        self.mesh = mesh
        self.order = order
        self.constraint = constraint
        n1, n2 = mesh.subdivisions
        if order == 1:
            self.dof_grid = mesh
        else:
            self.dof_grid = build_uniform_quad_mesh(mesh.origin, mesh.side_lengths, (2 * n1, 2 * n2))
        self.dof_count = (order * n1 + 1) * (order * n2 + 1)

        stride = order * n1 + 1
        i, j = np.meshgrid(np.arange(n1), np.arange(n2), indexing="xy")
        base = (order * j * stride + order * i).ravel()
        b, c = np.meshgrid(np.arange(order + 1), np.arange(order + 1), indexing="ij")
        local = (b * stride + c).ravel()
        self.element_dofs = base[:, None] + local[None, :]

        if constraint == "dirichlet":
            constrained = np.array(sorted(self.dof_grid.boundary_nodes), dtype=int)
            self.periodic_pairs: dict[int, int] = {}
            self.pinned_dof = None
        elif constraint == "periodic":
            self.periodic_pairs = dict(self.dof_grid.periodic_pairs)
            if pinned_dof in self.periodic_pairs:
                raise ValueError(f"pinned dof {pinned_dof} is a periodic slave")
            self.pinned_dof = int(pinned_dof)
            constrained = np.array(sorted([*self.periodic_pairs, self.pinned_dof]), dtype=int)
        else:
            constrained = np.zeros(0, dtype=int)
            self.periodic_pairs = {}
            self.pinned_dof = None
        self.constrained_dofs = constrained
        mask = np.ones(self.dof_count, dtype=bool)
        mask[constrained] = False
        self.free_dofs = np.flatnonzero(mask)

    def __repr__(self) -> str:
        return (
            f"FESpace(Q{self.order}, subdivisions={self.mesh.subdivisions}, "
            f"constraint={self.constraint!r}, dofs={self.dof_count})"
        )

    @property
    def dof_coordinates(self) -> np.ndarray:
        return self.dof_grid.nodes

    @property
    def n_local(self) -> int:
        return (self.order + 1) ** 2

    @cached_property
    def free_mask(self) -> np.ndarray:
        mask = np.zeros(self.dof_count, dtype=bool)
        mask[self.free_dofs] = True
        return mask

    @cached_property
    def prolongation(self) -> sp.csr_matrix:
        """Map from free-dof vectors to full coefficient vectors.

        Dirichlet and pinned dofs receive zero; periodic slaves copy their
        master's value. Reduced operators are ``P.T @ A @ P``.
        """
        col_of = -np.ones(self.dof_count, dtype=int)
        col_of[self.free_dofs] = np.arange(self.free_dofs.size)
        rows, cols = [], []
        for d in range(self.dof_count):
            src = self.periodic_pairs.get(d, d)
            if col_of[src] >= 0:
                rows.append(d)
                cols.append(col_of[src])
        data = np.ones(len(rows))
        return sp.csr_matrix((data, (rows, cols)), shape=(self.dof_count, self.free_dofs.size))

    def default_rule(self) -> QuadratureRule:
        return gauss_rule(self.order + 1)

    def error_rule(self) -> QuadratureRule:
        return gauss_rule(self.order + 2)

    def quadrature_points(self, rule: QuadratureRule) -> np.ndarray:
        """Physical quadrature points, shape ``(n_elements, nq, 2)``."""
        h = np.asarray(self.mesh.cell_size)
        return self.mesh.element_origins[:, None, :] + rule.points[None, :, :] * h

    def tabulate(self, rule: QuadratureRule) -> tuple[np.ndarray, np.ndarray]:
        """Shape values ``(nq, nloc)`` and physical gradients ``(nq, nloc, 2)``."""
        val, grad = shape_functions(self.order, rule.points)
        return val, grad / np.asarray(self.mesh.cell_size)

    def _scatter(self, element_matrices: np.ndarray) -> sp.csr_matrix:
        ne, nl, _ = element_matrices.shape
        rows = np.repeat(self.element_dofs, nl, axis=1).ravel()
        cols = np.tile(self.element_dofs, (1, nl)).ravel()
        A = sp.coo_matrix(
            (element_matrices.ravel(), (rows, cols)), shape=(self.dof_count, self.dof_count)
        ).tocsr()
        A.sum_duplicates()
        return A

    @cached_property
    def mass(self) -> sp.csr_matrix:
        return assemble_mass(self)

    @cached_property
    def laplacian(self) -> sp.csr_matrix:
        return assemble_stiffness(self, 1.0)


@dataclass
class FEFunction:
    space: FESpace
    coefficients: np.ndarray

    def __post_init__(self):
        self.coefficients = np.asarray(self.coefficients, dtype=float)
        if self.coefficients.shape != (self.space.dof_count,):
            raise ValueError(
                f"expected {self.space.dof_count} coefficients, got {self.coefficients.shape}"
            )

    def at_quadrature(self, rule: QuadratureRule) -> tuple[np.ndarray, np.ndarray]:
        """Values ``(ne, nq)`` and gradients ``(ne, nq, 2)`` at quadrature points."""
        val, grad = self.space.tabulate(rule)
        local = self.coefficients[self.space.element_dofs]
        return local @ val.T, np.einsum("el,qld->eqd", local, grad)

    def __sub__(self, other: FEFunction) -> FEFunction:
        return FEFunction(self.space, self.coefficients - other.coefficients)


def assemble_mass(space: FESpace, rule: QuadratureRule | None = None) -> sp.csr_matrix:
    rule = rule or space.default_rule()
    val, _ = space.tabulate(rule)
    me = space.mesh.element_area * np.einsum("q,qa,qb->ab", rule.weights, val, val)
    return space._scatter(np.broadcast_to(me, (space.mesh.n_elements, *me.shape)))


def _tensor_at(tensor, points: np.ndarray) -> np.ndarray:
    """Evaluate a scalar, constant 2x2 matrix, or callable at ``(N, 2)`` points."""
    if callable(tensor):
        values = np.asarray(tensor(points), dtype=float)
    else:
        values = np.asarray(tensor, dtype=float)
        if values.ndim == 0:
            values = values * np.eye(2)
        values = np.broadcast_to(values, (points.shape[0], 2, 2))
    if values.shape != (points.shape[0], 2, 2):
        raise ValueError(f"tensor must evaluate to shape (N, 2, 2), got {values.shape}")
    return values


def assemble_stiffness(
    space: FESpace, tensor, rule: QuadratureRule | None = None
) -> sp.csr_matrix:
    """Stiffness matrix of ``(tensor grad u, grad v)`` by element quadrature.

    ``tensor`` is a scalar, a constant 2x2 matrix, or a callable mapping
    ``(N, 2)`` points to ``(N, 2, 2)`` matrices.
    """
    rule = rule or space.default_rule()
    _, grad = space.tabulate(rule)
    ne, nq = space.mesh.n_elements, rule.n_points
    if callable(tensor):
        pts = space.quadrature_points(rule).reshape(-1, 2)
        a = _tensor_at(tensor, pts)
        if not np.all(np.isfinite(a)):
            bad = pts[~np.isfinite(a).all(axis=(1, 2))][0]
            raise FloatingPointError(f"tensor evaluation is not finite at {bad}")
        a = a.reshape(ne, nq, 2, 2)
        ke = space.mesh.element_area * np.einsum(
            "q,qai,eqij,qbj->eab", rule.weights, grad, a, grad, optimize=True
        )
    else:
        a = _tensor_at(tensor, np.zeros((1, 2)))[0]
        if not np.all(np.isfinite(a)):
            raise FloatingPointError("tensor is not finite")
        k = space.mesh.element_area * np.einsum("q,qai,ij,qbj->ab", rule.weights, grad, a, grad)
        ke = np.broadcast_to(k, (ne, *k.shape))
    return space._scatter(np.ascontiguousarray(ke))


def assemble_load(space: FESpace, nodal_values: np.ndarray) -> np.ndarray:
    """Right-hand side of nodally interpolated data: ``M @ nodal_values``."""
    nodal_values = np.asarray(nodal_values, dtype=float)
    if nodal_values.shape != (space.dof_count,):
        raise ValueError(f"expected {space.dof_count} nodal values, got {nodal_values.shape}")
    return space.mass @ nodal_values


def interpolate_nodal(space: FESpace, g: Callable[[np.ndarray], np.ndarray]) -> FEFunction:
    values = np.asarray(g(space.dof_coordinates), dtype=float)
    values = np.broadcast_to(values, (space.dof_count,)).copy()
    if not np.all(np.isfinite(values)):
        bad = space.dof_coordinates[~np.isfinite(values)][0]
        raise FloatingPointError(f"interpolated function is not finite at {bad}")
    return FEFunction(space, values)


def error_norms(
    u_h: FEFunction,
    exact: Callable[[np.ndarray], np.ndarray] | None,
    exact_grad: Callable[[np.ndarray], np.ndarray] | None,
    rule: QuadratureRule | None = None,
) -> tuple[float, float]:
    """``(||u_h - u||_L2, |u_h - u|_H1)`` by quadrature; ``None`` means zero."""
    space = u_h.space
    rule = rule or space.error_rule()
    val, grad = u_h.at_quadrature(rule)
    pts = space.quadrature_points(rule).reshape(-1, 2)
    if exact is not None:
        val = val - np.asarray(exact(pts)).reshape(val.shape)
    if exact_grad is not None:
        grad = grad - np.asarray(exact_grad(pts)).reshape(grad.shape)
    w = rule.weights * space.mesh.element_area
    l2 = np.sqrt(np.einsum("q,eq->", w, val**2))
    h1 = np.sqrt(np.einsum("q,eqd->", w, grad**2))
    return float(l2), float(h1)


def eliminate_dirichlet(A: sp.spmatrix, dofs: np.ndarray, diagonal: float = 1.0) -> sp.csr_matrix:
    """Zero the rows and columns of ``dofs`` and put ``diagonal`` on them.

    Symmetry is preserved, so an SPD matrix stays SPD on the free dofs.
    """
    n = A.shape[0]
    keep = np.ones(n, dtype=float)
    keep[dofs] = 0.0
    D = sp.diags(keep)
    out = D @ sp.csr_matrix(A) @ D
    if diagonal:
        out = out + sp.diags(diagonal * (1.0 - keep))
    out = sp.csr_matrix(out)
    out.eliminate_zeros()
    return out


def dirichlet_rhs(
    A: sp.spmatrix, b: np.ndarray, dofs: np.ndarray, values: np.ndarray | float = 0.0
) -> np.ndarray:
    """Right-hand side matching :func:`eliminate_dirichlet` with unit diagonal."""
    g = np.zeros(A.shape[0])
    g[dofs] = values
    out = np.asarray(b, dtype=float) - A @ g
    out[dofs] = g[dofs]
    return out


def pcg(
    A: sp.spmatrix, b: np.ndarray, tol: float = 1e-10, maxiter: int | None = None, x0=None
) -> tuple[np.ndarray, int]:
    """Jacobi-preconditioned conjugate gradients; returns ``(x, iterations)``."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    b = np.asarray(b, dtype=float)
    n = b.size
    maxiter = 10 * n if maxiter is None else maxiter
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros(n), 0
    d = A.diagonal()
    if np.any(d <= 0):
        raise ValueError("matrix has non-positive diagonal entries")
    dinv = 1.0 / d
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    r = b - A @ x
    z = dinv * r
    p = z.copy()
    rz = r @ z
    for it in range(1, maxiter + 1):
        if np.linalg.norm(r) <= tol * bnorm:
            return x, it - 1
        Ap = A @ p
        alpha = rz / (p @ Ap)
        x += alpha * p
        r -= alpha * Ap
        z = dinv * r
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    res = np.linalg.norm(r) / bnorm
    if res <= tol:
        return x, maxiter
    raise SolverError(
        f"CG did not converge in {maxiter} iterations (relative residual {res:.3e})",
        residual=res,
        iterations=maxiter,
    )


def solve_spd(A: sp.spmatrix, b: np.ndarray, tol: float = 1e-10, maxiter: int | None = None) -> np.ndarray:
    x, _ = pcg(A, b, tol=tol, maxiter=maxiter)
    return x


class SPDSolver:
    """Reusable solver for one SPD matrix, direct (LU) or Jacobi-PCG."""

    def __init__(self, A: sp.spmatrix, method: str = "direct", tol: float = 1e-10):
        if method not in ("direct", "cg"):
            raise ValueError(f"unknown solver method {method!r}")
        self.A = sp.csr_matrix(A)
        self.method = method
        self.tol = tol
        self.iterations = 0
        self.calls = 0
        self._lu = spla.splu(sp.csc_matrix(self.A), permc_spec="MMD_AT_PLUS_A") if method == "direct" else None

    def solve(self, b: np.ndarray) -> np.ndarray:
        self.calls += 1
        if self._lu is not None:
            return self._lu.solve(np.asarray(b, dtype=float))
        x, its = pcg(self.A, b, tol=self.tol)
        self.iterations += its
        return x
