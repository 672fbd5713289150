"""Geometry of the box Lambda(n) in Z^d.

Vertices are the points of {-floor(n/2), ..., floor((n-1)/2)}^d, numbered
row-major (first coordinate most significant), so vertex ids sort the same way
as coordinate tuples. Edges are nearest-neighbour pairs, with wrap-around pairs
added in torus mode.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

# vertex and edge ids are stored as int32 throughout the package
MAX_INDEX = 2**31 - 1


@dataclass(frozen=True, eq=False)
class BoxGeometry:
    """Immutable vertex/edge tables of one box.

    ``edges[k]`` holds the endpoint ids of edge k, smaller id first, and
    ``edge_axis[k]`` its direction. ``nbr`` / ``nbr_edge`` have shape ``(N, 2d)``: column
    ``2*i`` is the neighbour in direction ``+e_i``, column ``2*i+1`` in
    direction ``-e_i``; -1 marks a missing neighbour.
    """

    d: int
    n: int
    torus: bool
    coords: np.ndarray = field(repr=False)
    edges: np.ndarray = field(repr=False)
    edge_axis: np.ndarray = field(repr=False)
    boundary_mask: np.ndarray = field(repr=False)
    nbr: np.ndarray = field(repr=False)
    nbr_edge: np.ndarray = field(repr=False)

    @property
    def num_vertices(self) -> int:
        return self.coords.shape[0]

    @property
    def num_edges(self) -> int:
        return self.edges.shape[0]

    @property
    def boundary(self) -> np.ndarray:
        return np.flatnonzero(self.boundary_mask)

    @property
    def lo(self) -> int:
        return -(self.n // 2)

    @property
    def hi(self) -> int:
        return (self.n - 1) // 2

    def vertex_id(self, point) -> int:
        """Row-major id of a lattice point; raises if it lies outside the box."""
        point = tuple(int(c) for c in point)
        if len(point) != self.d:
            raise ValueError(f"expected {self.d} coordinates, got {len(point)}")
        vid = 0
        for c in point:
            if not self.lo <= c <= self.hi:
                raise ValueError(f"point {point} is outside Lambda({self.n})")
            vid = vid * self.n + (c - self.lo)
        return vid

    def edge_id(self, u, v) -> int:
        """Id of the edge joining two points (or two vertex ids)."""
        if not np.isscalar(u):
            u = self.vertex_id(u)
        if not np.isscalar(v):
            v = self.vertex_id(v)
        for k in range(2 * self.d):
            if self.nbr[u, k] == v:
                return int(self.nbr_edge[u, k])
        raise ValueError(f"vertices {u} and {v} are not adjacent")

    def __eq__(self, other):
        if not isinstance(other, BoxGeometry):
            return NotImplemented
        return (self.d, self.n, self.torus) == (other.d, other.n, other.torus)

    def __hash__(self):
        return hash((self.d, self.n, self.torus))


def build_box(d: int, n: int, torus: bool = False) -> BoxGeometry:
    """Build (or fetch from cache) the box of side ``n`` in dimension ``d``."""
    d, n, torus = int(d), int(n), bool(torus)
    if d < 2:
        raise ValueError(f"dimension must be >= 2, got {d}")
    if n < 2:
        raise ValueError(f"side must be >= 2, got {n}")
    if torus and n < 3:
        # for n = 2 the wrap edge would duplicate the ordinary edge
        raise ValueError("torus boxes need side >= 3")
    if n**d > MAX_INDEX or d * n**d > MAX_INDEX:
        raise ValueError(f"box Lambda({n}) in d={d} exceeds the index width")
    return _build_box(d, n, torus)


@lru_cache(maxsize=64)
def _build_box(d: int, n: int, torus: bool) -> BoxGeometry:
    lo, hi = -(n // 2), (n - 1) // 2
    N = n**d
    grid = np.indices((n,) * d).reshape(d, N).T
    coords = (grid + lo).astype(np.int32)
    strides = n ** np.arange(d - 1, -1, -1)

    src_l, dst_l, axes = [], [], []
    ids = np.arange(N)
    for i in range(d):
        # src -> dst is the +e_i step
        src = ids[grid[:, i] < n - 1] if not torus else ids
        dst = np.where(grid[src, i] < n - 1, src + strides[i], src - (n - 1) * strides[i])
        src_l.append(src)
        dst_l.append(dst)
        axes.append(np.full(src.size, i))
    src = np.concatenate(src_l)
    dst = np.concatenate(dst_l)
    ax = np.concatenate(axes)
    # order: lexicographically smallest endpoint, then axis, then other endpoint
    first = np.minimum(src, dst)
    second = np.maximum(src, dst)
    order = np.lexsort((second, ax, first))
    src, dst, ax = src[order], dst[order], ax[order]
    edges = np.stack([np.minimum(src, dst), np.maximum(src, dst)], axis=1).astype(np.int32)

    nbr = np.full((N, 2 * d), -1, dtype=np.int32)
    nbr_edge = np.full((N, 2 * d), -1, dtype=np.int32)
    eid = np.arange(edges.shape[0], dtype=np.int32)
    nbr[src, 2 * ax] = dst
    nbr_edge[src, 2 * ax] = eid
    nbr[dst, 2 * ax + 1] = src
    nbr_edge[dst, 2 * ax + 1] = eid

    if torus:
        boundary_mask = np.zeros(N, dtype=bool)
    else:
        boundary_mask = np.any((coords == lo) | (coords == hi), axis=1)

    for arr in (coords, edges, nbr, nbr_edge, boundary_mask):
        arr.setflags(write=False)
    ax = ax.astype(np.int8)
    ax.setflags(write=False)
    return BoxGeometry(d, n, torus, coords, edges, ax, boundary_mask, nbr, nbr_edge)


def edge_order(box: BoxGeometry) -> np.ndarray:
    """Edge ids in the fixed total order used by the coupling.

    Edges are stored already sorted by (smallest endpoint coordinates, axis),
    so the order is the identity permutation; it is returned explicitly so
    callers never depend on that storage detail.
    """
    return np.arange(box.num_edges, dtype=np.int64)


def box_points(n: int, d: int) -> np.ndarray:
    """Coordinates of Lambda(n), row-major, without building edge tables."""
    lo = -(n // 2)
    return (np.indices((n,) * d).reshape(d, -1).T + lo).astype(np.int64)


def box_boundary_offsets(k: int, d: int) -> np.ndarray:
    """Points of the inner boundary of Lambda(k), i.e. offsets y with x + y in x + dLambda(k)."""
    pts = box_points(k, d)
    lo, hi = -(k // 2), (k - 1) // 2
    on_bnd = np.any((pts == lo) | (pts == hi), axis=1)
    return pts[on_bnd]
