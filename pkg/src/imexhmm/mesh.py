"""Uniform quadrilateral meshes of axis-aligned rectangles."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class Mesh:
    """Uniform rectangular partition with lexicographic node numbering.

    Node ``k`` sits at grid index ``(i, j)`` with ``k = j * (n1 + 1) + i``,
    i.e. x2 is the major and x1 the minor index. Elements list their corners
    counter-clockwise starting at the lower-left vertex.
    """

    origin: tuple[float, float]
    side_lengths: tuple[float, float]
    subdivisions: tuple[int, int]
    nodes: np.ndarray = field(repr=False)
    elements: np.ndarray = field(repr=False)
    boundary_nodes: frozenset[int] = field(repr=False)
    periodic_pairs: dict[int, int] = field(repr=False)

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def n_elements(self) -> int:
        return self.elements.shape[0]

    @property
    def cell_size(self) -> tuple[float, float]:
        return (
            self.side_lengths[0] / self.subdivisions[0],
            self.side_lengths[1] / self.subdivisions[1],
        )

    @property
    def element_area(self) -> float:
        hx, hy = self.cell_size
        return hx * hy

    @property
    def element_origins(self) -> np.ndarray:
        """Lower-left corner of every element, shape ``(n_elements, 2)``."""
        return self.nodes[self.elements[:, 0]]

    def boundary_mask(self) -> np.ndarray:
        mask = np.zeros(self.n_nodes, dtype=bool)
        mask[list(self.boundary_nodes)] = True
        return mask


def _grid_nodes(origin, side_lengths, subdivisions) -> np.ndarray:
    n1, n2 = subdivisions
    # i / n * L keeps max-face coordinates exact, unlike accumulating h
    x1 = origin[0] + side_lengths[0] * np.arange(n1 + 1) / n1
    x2 = origin[1] + side_lengths[1] * np.arange(n2 + 1) / n2
    X1, X2 = np.meshgrid(x1, x2, indexing="xy")
    return np.column_stack([X1.ravel(), X2.ravel()])


def build_uniform_quad_mesh(
    origin: tuple[float, float],
    side_lengths: tuple[float, float],
    subdivisions: tuple[int, int],
) -> Mesh:
    """Build a uniform ``n1 x n2`` quadrilateral mesh of a rectangle.

    Raises:
        ValueError: if a side length is not positive or a subdivision count
            is smaller than one.
    """
    origin = (float(origin[0]), float(origin[1]))
    side_lengths = (float(side_lengths[0]), float(side_lengths[1]))
    if len(subdivisions) != 2 or any(int(n) != n for n in subdivisions):
        raise ValueError(f"subdivisions must be a pair of integers, got {subdivisions!r}")
    subdivisions = (int(subdivisions[0]), int(subdivisions[1]))
    if not all(np.isfinite(s) and s > 0 for s in side_lengths):
        raise ValueError(f"side lengths must be positive, got {side_lengths}")
    if min(subdivisions) < 1:
        raise ValueError(f"subdivisions must be >= 1, got {subdivisions}")

    n1, n2 = subdivisions
    nodes = _grid_nodes(origin, side_lengths, subdivisions)
    nodes.setflags(write=False)

    i, j = np.meshgrid(np.arange(n1), np.arange(n2), indexing="xy")
    ll = (j * (n1 + 1) + i).ravel()
    elements = np.column_stack([ll, ll + 1, ll + n1 + 2, ll + n1 + 1])
    elements.setflags(write=False)

    gi, gj = np.meshgrid(np.arange(n1 + 1), np.arange(n2 + 1), indexing="xy")
    gi, gj = gi.ravel(), gj.ravel()
    on_boundary = (gi == 0) | (gi == n1) | (gj == 0) | (gj == n2)
    boundary = frozenset(np.flatnonzero(on_boundary).tolist())

    mesh = Mesh(
        origin=origin,
        side_lengths=side_lengths,
        subdivisions=subdivisions,
        nodes=nodes,
        elements=elements,
        boundary_nodes=boundary,
        periodic_pairs={},
    )
    object.__setattr__(mesh, "periodic_pairs", periodic_identification(mesh))
    return mesh


def periodic_identification(mesh: Mesh) -> dict[int, int]:
    """Map every node on an x1-max or x2-max face to its min-face partner.

    Opposite faces are identified coordinate-wise, so the max-max corner maps
    straight to the min-min corner and no master is ever itself a slave.
    """
    n1, n2 = mesh.subdivisions
    stride = n1 + 1
    pairs: dict[int, int] = {}
    for j in range(n2 + 1):
        for i in range(n1 + 1):
            mi = 0 if i == n1 else i
            mj = 0 if j == n2 else j
            if (mi, mj) != (i, j):
                pairs[j * stride + i] = mj * stride + mi

    tol = 1e-12 * max(mesh.side_lengths)
    if pairs:
        slaves = np.fromiter(pairs.keys(), dtype=int)
        masters = np.fromiter(pairs.values(), dtype=int)
        d = np.abs(mesh.nodes[slaves] - mesh.nodes[masters])
        # each coordinate either matches or differs by exactly one period
        for axis in range(2):
            off = np.abs(d[:, axis] - mesh.side_lengths[axis])
            assert np.all((d[:, axis] <= tol) | (off <= tol))
    return pairs


def structured_grid(mesh: Mesh, refinement: int) -> Mesh:
    """Same rectangle with every subdivision multiplied by ``refinement``."""
    n1, n2 = mesh.subdivisions
    return build_uniform_quad_mesh(
        mesh.origin, mesh.side_lengths, (refinement * n1, refinement * n2)
    )
