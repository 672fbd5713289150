import numpy as np
import pytest

from socperc.lattice import build_box, edge_order, box_boundary_offsets


@pytest.mark.parametrize(
    "d,n,torus,nv,ne,nb",
    [(2, 2, False, 4, 4, 4), (2, 3, False, 9, 12, 8), (3, 2, False, 8, 12, 8), (2, 3, True, 9, 18, 0)],
)
def test_small_boxes(d, n, torus, nv, ne, nb):
    box = build_box(d, n, torus)
    assert box.num_vertices == nv
    assert box.num_edges == ne
    assert box.boundary.size == nb


@pytest.mark.parametrize("d,n", [(2, n) for n in range(2, 17)] + [(3, n) for n in range(2, 11)])
def test_closed_form_counts(d, n):
    box = build_box(d, n)
    assert box.num_vertices == n**d
    assert box.num_edges == d * n ** (d - 1) * (n - 1)
    if d == 2:
        assert box.num_edges == 2 * n * (n - 1)
    diff = np.abs(box.coords[box.edges[:, 0]] - box.coords[box.edges[:, 1]]).sum(axis=1)
    assert np.all(diff == 1)
    degree = np.bincount(box.edges.ravel(), minlength=box.num_vertices)
    assert np.array_equal(box.boundary_mask, degree < 2 * d)
    if n >= 3:
        torus = build_box(d, n, True)
        assert torus.num_edges == d * n**d
        assert torus.boundary.size == 0
        delta = np.abs(torus.coords[torus.edges[:, 0]] - torus.coords[torus.edges[:, 1]])
        assert np.all((delta.sum(axis=1) == 1) | ((delta == n - 1).sum(axis=1) == 1) & (delta.sum(axis=1) == n - 1))


def test_coordinates_and_ids():
    box = build_box(2, 4)
    assert box.lo == -2 and box.hi == 1
    assert tuple(box.coords[0]) == (-2, -2)
    for v in range(box.num_vertices):
        assert box.vertex_id(box.coords[v]) == v
    with pytest.raises(ValueError):
        box.vertex_id((2, 0))


def test_edge_order_definition():
    box = build_box(2, 2)
    order = edge_order(box)
    first = box.edges[order[0]]
    assert tuple(box.coords[first[0]]) == (-1, -1)
    assert box.edge_axis[order[0]] == 0
    assert tuple(box.coords[first[1]]) == (0, -1)
    for d, n in [(2, 5), (3, 3)]:
        box = build_box(d, n)
        order = edge_order(box)
        assert sorted(order.tolist()) == list(range(box.num_edges))
        keys = [(tuple(box.coords[box.edges[e, 0]]), int(box.edge_axis[e])) for e in order]
        assert keys == sorted(keys)
        assert np.array_equal(order, edge_order(build_box(d, n)))


def test_neighbour_tables_consistent():
    for torus in (False, True):
        box = build_box(2, 5, torus)
        for v in range(box.num_vertices):
            for k in range(4):
                w, e = box.nbr[v, k], box.nbr_edge[v, k]
                if w < 0:
                    continue
                assert set(box.edges[e]) == {v, w}
                back = k ^ 1
                assert box.nbr[w, back] == v


def test_edge_id_lookup():
    box = build_box(2, 3)
    e = box.edge_id((0, 0), (0, 1))
    assert set(map(tuple, box.coords[box.edges[e]].tolist())) == {(0, 0), (0, 1)}
    with pytest.raises(ValueError):
        box.edge_id((0, 0), (1, 1))


@pytest.mark.parametrize("bad", [(1, 3, False), (2, 1, False), (2, 2, True)])
def test_rejects_bad_parameters(bad):
    with pytest.raises(ValueError):
        build_box(*bad)


def test_rejects_index_overflow():
    with pytest.raises(ValueError):
        build_box(3, 2000)


def test_build_is_cached_and_immutable():
    assert build_box(2, 6) is build_box(2, 6)
    box = build_box(2, 6)
    with pytest.raises(ValueError):
        box.edges[0, 0] = 3
    assert build_box(2, 6) == build_box(2, 6, False)
    assert build_box(2, 6) != build_box(2, 6, True)


def test_boundary_offsets():
    off = box_boundary_offsets(3, 2)
    assert len(off) == 8
    assert (0, 0) not in set(map(tuple, off.tolist()))
