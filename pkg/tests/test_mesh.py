import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from imexhmm.mesh import build_uniform_quad_mesh, periodic_identification, structured_grid


def test_counts_unit_square_2x2():
    m = build_uniform_quad_mesh((0, 0), (1, 1), (2, 2))
    assert m.n_nodes == 9
    assert m.n_elements == 4
    assert len(m.boundary_nodes) == 8
    assert 4 not in m.boundary_nodes


def test_node_numbering_and_orientation():
    m = build_uniform_quad_mesh((0, 0), (2, 1), (2, 1))
    np.testing.assert_allclose(m.nodes[1], [1.0, 0.0])
    np.testing.assert_allclose(m.nodes[3], [0.0, 1.0])
    np.testing.assert_array_equal(m.elements[0], [0, 1, 4, 3])


def test_periodic_pairs_2x2():
    m = build_uniform_quad_mesh((0, 0), (1, 1), (2, 2))
    pairs = periodic_identification(m)
    assert len(pairs) == 5
    assert pairs[8] == 0
    assert set(pairs.values()).isdisjoint(pairs)
    assert pairs == m.periodic_pairs


def test_interior_node_in_four_elements():
    m = build_uniform_quad_mesh((0, 0), (1, 1), (3, 3))
    counts = np.bincount(m.elements.ravel(), minlength=m.n_nodes)
    interior = [k for k in range(m.n_nodes) if k not in m.boundary_nodes]
    assert np.all(counts[interior] == 4)


def test_structured_grid_refines():
    m = build_uniform_quad_mesh((0, 0), (1, 1), (2, 3))
    assert structured_grid(m, 2).subdivisions == (4, 6)


@pytest.mark.parametrize("bad", [((0, 0), (1, 1), (0, 2)), ((0, 0), (-1, 1), (2, 2))])
def test_rejects_invalid(bad):
    with pytest.raises(ValueError):
        build_uniform_quad_mesh(*bad)


@settings(max_examples=30, deadline=None)
@given(
    n1=st.integers(1, 8),
    n2=st.integers(1, 8),
    lx=st.floats(0.1, 10),
    ly=st.floats(0.1, 10),
)
def test_areas_sum_and_periodic_idempotent(n1, n2, lx, ly):
    m = build_uniform_quad_mesh((0.5, -1.0), (lx, ly), (n1, n2))
    assert m.n_nodes == (n1 + 1) * (n2 + 1)
    assert np.isclose(m.element_area * m.n_elements, lx * ly)
    pairs = periodic_identification(m)
    assert len(pairs) == n1 + n2 + 1
    # masters are never slaves, so mapping twice changes nothing
    assert all(pairs.get(v, v) == v for v in pairs.values())
