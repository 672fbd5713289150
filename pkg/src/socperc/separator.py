"""Cutting finite subgraphs of Z^d with few edges.

Three constructive routines:

* :func:`bisect` removes O(|V|^((d-1)/d)) edges so that every remaining
  component has at most ceil(|V|/2) vertices. It trims the graph with the
  cheapest axis-parallel slices inside the middle third of each over-wide
  direction, keeps the largest piece, and repeats until the piece is small
  enough to be split by removing the two slices around a central hyperplane.
* :func:`surgeon_reopen_order` orders a cut set by growing the component of
  a root vertex one reopened edge at a time.
* :func:`carve` combines both: it removes O(|V|^((d-1)/d)) edges so that the
  component of a root vertex has exactly m vertices.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numba as nb
import numpy as np

from .percolation import label_clusters


def butcher_bound(num_vertices: int, d: int) -> float:
    """Guaranteed cut size 4^(d+1) d^2 |V|^((d-1)/d) of :func:`bisect`."""
    return 4.0 ** (d + 1) * d * d * num_vertices ** ((d - 1) / d)


def carve_constant(d: int) -> float:
    """K(d) = 4^(d+1) d^2 / (1 - 2^(-(d-1)/d)), the constant of :func:`carve`."""
    return 4.0 ** (d + 1) * d * d / (1.0 - 2.0 ** (-(d - 1) / d))


def carve_bound(num_vertices: int, d: int) -> float:
    return carve_constant(d) * num_vertices ** ((d - 1) / d)


@dataclass(frozen=True, eq=False)
class LatticeSubgraph:
    """Finite subgraph of the lattice Z^d.

    ``points`` is an ``(N, d)`` integer array sorted lexicographically and
    ``edge_index`` an ``(M, 2)`` array of row indices into ``points`` (smaller
    index first, rows sorted). Connectivity is not required.
    """

    points: np.ndarray
    edge_index: np.ndarray
    _axis: np.ndarray = field(init=False, repr=False)
    _low: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.int64)
        if pts.ndim != 2:
            raise ValueError("points must be an (N, d) array")
        ei = np.asarray(self.edge_index, dtype=np.int64).reshape(-1, 2)
        if pts.shape[0] > 1:
            order = np.lexsort(pts.T[::-1])
            if np.any(order != np.arange(pts.shape[0])):
                raise ValueError("points must be sorted lexicographically; use from_points")
            if np.any(np.all(pts[1:] == pts[:-1], axis=1)):
                raise ValueError("duplicate points")
        if ei.size:
            if ei.min() < 0 or ei.max() >= pts.shape[0]:
                raise ValueError("edge index out of range")
            diff = pts[ei[:, 1]] - pts[ei[:, 0]]
            if np.any(np.abs(diff).sum(axis=1) != 1):
                raise ValueError("every edge must join two points at L1 distance 1")
        ei = np.sort(ei, axis=1)
        ei = np.unique(ei, axis=0) if ei.size else ei
        axis = np.argmax(np.abs(pts[ei[:, 1]] - pts[ei[:, 0]]), axis=1) if ei.size else np.zeros(0, np.int64)
        low = np.minimum(pts[ei[:, 0], axis], pts[ei[:, 1], axis]) if ei.size else np.zeros(0, np.int64)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "edge_index", ei)
        object.__setattr__(self, "_axis", axis)
        object.__setattr__(self, "_low", low)

    @classmethod
    def from_points(cls, points, edges=None):
        """Build from lattice points; ``edges`` defaults to the induced subgraph.

        ``edges`` is an iterable of point pairs ``(u, v)``.
        """
        pts = np.unique(np.asarray(list(points), dtype=np.int64).reshape(len(points), -1), axis=0)
        index = {tuple(p): i for i, p in enumerate(pts.tolist())}
        if edges is None:
            ei = _induced_edges(pts)
        else:
            ei = np.array(
                [(index[tuple(map(int, u))], index[tuple(map(int, v))]) for u, v in edges], dtype=np.int64
            ).reshape(-1, 2)
        return cls(pts, ei)

    @property
    def d(self) -> int:
        return self.points.shape[1]

    @property
    def num_vertices(self) -> int:
        return self.points.shape[0]

    @property
    def num_edges(self) -> int:
        return self.edge_index.shape[0]

    @property
    def vertices(self) -> list[tuple]:
        return [tuple(p) for p in self.points.tolist()]

    def edge_pairs(self, edge_ids=None) -> set[tuple]:
        """Edges (all, or the given edge ids) as pairs of coordinate tuples."""
        ei = self.edge_index if edge_ids is None else self.edge_index[np.asarray(list(edge_ids), dtype=np.int64)]
        pts = self.points.tolist()
        return {(tuple(pts[u]), tuple(pts[v])) for u, v in ei.tolist()}

    @property
    def edges(self) -> set[tuple]:
        return self.edge_pairs()

    def index_of(self, point) -> int:
        p = np.asarray(point, dtype=np.int64)
        i = _row_search(self.points, p)
        if i < 0:
            raise ValueError(f"point {tuple(p)} is not a vertex of the subgraph")
        return i

    def components(self, removed=()) -> tuple[np.ndarray, np.ndarray]:
        """(labels, sizes) of the graph with the edge ids ``removed`` deleted."""
        keep = np.ones(self.num_edges, dtype=bool)
        keep[np.asarray(list(removed), dtype=np.int64)] = False
        labels = np.empty(self.num_vertices, dtype=np.int64)
        sizes = np.empty(self.num_vertices, dtype=np.int64)
        k = label_clusters(self.num_vertices, self.edge_index, keep, labels, sizes)
        return labels, sizes[:k].copy()

    def is_connected(self) -> bool:
        return self.num_vertices > 0 and self.components()[1].size == 1


def _induced_edges(pts: np.ndarray) -> np.ndarray:
    out = []
    d = pts.shape[1]
    for i in range(d):
        shifted = pts.copy()
        shifted[:, i] += 1
        idx = np.array([_row_search(pts, q) for q in shifted], dtype=np.int64) if pts.size else np.zeros(0, np.int64)
        has = idx >= 0
        out.append(np.stack([np.flatnonzero(has), idx[has]], axis=1))
    return np.concatenate(out) if out else np.zeros((0, 2), np.int64)


def _row_search(sorted_pts: np.ndarray, p: np.ndarray) -> int:
    lo, hi = 0, sorted_pts.shape[0]
    target = tuple(int(c) for c in p)
    while lo < hi:
        mid = (lo + hi) // 2
        row = tuple(sorted_pts[mid].tolist())
        if row < target:
            lo = mid + 1
        else:
            hi = mid
    if lo < sorted_pts.shape[0] and tuple(sorted_pts[lo].tolist()) == target:
        return lo
    return -1


# --------------------------------------------------------------------------- #
# butcher


class SeparatorBoundError(AssertionError):
    """A proven intermediate bound failed during a debug-mode run."""


def _components_of(num_local, local_edges, keep):
    labels = np.empty(num_local, dtype=np.int64)
    sizes = np.empty(num_local, dtype=np.int64)
    k = label_clusters(num_local, local_edges, keep, labels, sizes)
    return labels, sizes[:k]


class _Piece:
    """A vertex subset (sorted global ids) with the edge ids inside it."""

    __slots__ = ("vs", "es")

    def __init__(self, vs, es):
        self.vs = vs
        self.es = es

    def local_edges(self, g):
        ei = g.edge_index[self.es]
        return np.searchsorted(self.vs, ei)

    def components(self, g, keep=None):
        loc = self.local_edges(g)
        if keep is None:
            keep = np.ones(loc.shape[0], dtype=bool)
        return _components_of(self.vs.size, loc, keep)

    def restrict(self, g, mask_v, keep):
        """Sub-piece on vertices ``mask_v`` (local) using edges with ``keep``."""
        vs = self.vs[mask_v]
        loc = self.local_edges(g)
        inside = keep & mask_v[loc[:, 0]] & mask_v[loc[:, 1]]
        return _Piece(vs, self.es[inside])


def _largest(labels, sizes):
    # ties go to the component holding the smallest vertex (labels are ordered by first vertex)
    return int(np.argmax(sizes))


def bisect(g: LatticeSubgraph, debug: bool = False) -> set[int]:
    """Edge ids E_0 such that every component of g minus E_0 has <= ceil(|V|/2) vertices.

    The cut obeys ``len(E_0) <= butcher_bound(|V|, d)``. With ``debug`` the
    per-level slice bounds of the construction are asserted as it runs.
    """
    piece = _Piece(np.arange(g.num_vertices), np.arange(g.num_edges))
    return set(_bisect(g, piece, debug).tolist())


def _bisect(g, piece, debug=False):
    d = g.d
    V = piece.vs.size
    empty = np.zeros(0, dtype=np.int64)
    if V == 0:
        return empty
    target = -(-V // 2)
    labels, sizes = piece.components(g)
    if sizes.max() <= target:
        return empty
    if V < 4**d:
        return piece.es.copy()
    if sizes.size > 1:
        # every other component is already below |V|/2
        piece = piece.restrict(g, labels == _largest(labels, sizes), np.ones(piece.es.size, dtype=bool))
    A = V ** (1.0 / d)
    k = math.ceil((d * math.log(A) - math.log(A - 1.0)) / (math.log(3.0) - math.log(2.0)))
    return _trim(g, piece, k, A, target, debug)


def _trim(g, piece, k, A, target, debug):
    d = g.d
    removed = []
    while True:
        labels, sizes = piece.components(g)
        if sizes.max() <= target:
            break
        pts = g.points[piece.vs]
        diam = pts.max(axis=0) - pts.min(axis=0)
        if debug and diam.max() > 1.5**k * (A - 1.0) + 1e-9:
            raise SeparatorBoundError(f"diameter {diam.max()} exceeds (3/2)^{k} (A-1)")
        axis = g._axis[piece.es]
        low = g._low[piece.es]
        if k == 0:
            # isolate the central hyperplane of the widest direction
            i = int(np.argmax(diam))
            shift = pts[:, i].min() + (diam[i] + 1) // 2
            cut = piece.es[(axis == i) & ((low - shift == -1) | (low - shift == 0))]
            if debug and cut.size > 2 * A ** (d - 1) + 1e-9:
                raise SeparatorBoundError(f"central cut of {cut.size} edges exceeds 2 A^(d-1)")
            removed.append(cut)
            break
        wide = np.flatnonzero(diam > 1.5 ** (k - 1) * (A - 1.0))
        drop = np.zeros(piece.es.size, dtype=bool)
        for i in wide:
            base = pts[:, i].min()
            w = int(diam[i]) // 3
            on_axis = axis == i
            counts = np.bincount(low[on_axis] - base, minlength=2 * w + 1)
            window = counts[w + 1 : 2 * w + 1]
            m = w + 1 + int(np.argmin(window))
            if debug:
                bound = 12 * d * (2.0 / 3.0) ** (k - 1) * A ** (d - 1)
                if window.min() > bound + 1e-9 or window.min() * w > piece.es.size:
                    raise SeparatorBoundError(
                        f"slice {m} on axis {i} has {window.min()} edges, above the pigeonhole bound"
                    )
            drop |= on_axis & (low - base == m)
        removed.append(piece.es[drop])
        keep = ~drop
        labels, sizes = piece.components(g, keep)
        piece = piece.restrict(g, labels == _largest(labels, sizes), keep)
        k -= 1
    return np.concatenate(removed) if removed else np.zeros(0, dtype=np.int64)


# --------------------------------------------------------------------------- #
# surgeon


@nb.njit(cache=True)
def _reopen(num_local, indptr, adj_v, adj_e, ends, cut, x):
    """Order the cut edges by exploring outward from x.

    Returns (order, newv, sizes): ``order[s]`` is the (s+1)-th reopened edge,
    ``newv[s]`` the vertex it attaches (-1 if both ends were already reached),
    ``sizes[s]`` the size of the component of x after s reopenings.
    """
    num_cut = 0
    for e in range(cut.size):
        if cut[e]:
            num_cut += 1
    inside = np.zeros(num_local, dtype=np.bool_)
    seen = np.zeros(cut.size, dtype=np.bool_)
    frontier = np.empty(num_cut, dtype=np.int64)
    head = 0
    tail = 0
    stack = np.empty(num_local, dtype=np.int64)
    order = np.empty(num_cut, dtype=np.int64)
    newv = np.empty(num_cut, dtype=np.int64)
    sizes = np.empty(num_cut + 1, dtype=np.int64)
    size = 0
    start = x
    s = 0
    while True:
        if start >= 0:
            inside[start] = True
            size += 1
            top = 0
            stack[top] = start
            top += 1
            while top > 0:
                top -= 1
                v = stack[top]
                for j in range(indptr[v], indptr[v + 1]):
                    e = adj_e[j]
                    w = adj_v[j]
                    if cut[e]:
                        if not seen[e]:
                            seen[e] = True
                            frontier[tail] = e
                            tail += 1
                    elif not inside[w]:
                        inside[w] = True
                        size += 1
                        stack[top] = w
                        top += 1
        sizes[s] = size
        if head == tail:
            break
        e = frontier[head]
        head += 1
        order[s] = e
        a = ends[e, 0]
        b = ends[e, 1]
        if not inside[a]:
            start = a
        elif not inside[b]:
            start = b
        else:
            start = -1
        newv[s] = start
        s += 1
    return order[:s], newv[:s], sizes[: s + 1]


def _csr(num_local, local_edges):
    m = local_edges.shape[0]
    src = np.concatenate([local_edges[:, 0], local_edges[:, 1]])
    dst = np.concatenate([local_edges[:, 1], local_edges[:, 0]])
    eid = np.concatenate([np.arange(m), np.arange(m)])
    order = np.lexsort((dst, src))
    indptr = np.zeros(num_local + 1, dtype=np.int64)
    np.cumsum(np.bincount(src, minlength=num_local), out=indptr[1:])
    return indptr, dst[order].astype(np.int64), eid[order].astype(np.int64)


def _reopen_piece(g, piece, cut_mask, x_local):
    loc = piece.local_edges(g)
    indptr, adj_v, adj_e = _csr(piece.vs.size, loc)
    order, newv, sizes = _reopen(piece.vs.size, indptr, adj_v, adj_e, loc, cut_mask, x_local)
    if order.size != int(cut_mask.sum()) or sizes[-1] != piece.vs.size:
        raise ValueError("surgeon reopening needs a connected graph")
    return order, newv, sizes


def surgeon_reopen_order(g: LatticeSubgraph, cut, x) -> list[int]:
    """Order the edge ids in ``cut`` so each one touches the growing component of ``x``.

    Closing all of ``cut`` and reopening the edges in the returned order, the
    component of ``x`` after s reopenings (V_s) is nested in V_{s+1}, and
    every reopened edge has an endpoint in the previous V_s.
    """
    order, _ = reopen_sequence(g, cut, x)
    return order


def reopen_sequence(g: LatticeSubgraph, cut, x):
    """Like :func:`surgeon_reopen_order`, also returning the sizes |V_0|, ..., |V_r|."""
    xi = x if np.isscalar(x) else g.index_of(x)
    cut_mask = np.zeros(g.num_edges, dtype=bool)
    cut_mask[np.asarray(sorted(cut), dtype=np.int64)] = True
    piece = _Piece(np.arange(g.num_vertices), np.arange(g.num_edges))
    order, _, sizes = _reopen_piece(g, piece, cut_mask, int(xi))
    return order.tolist(), sizes.tolist()


def carve(g: LatticeSubgraph, x, m: int, debug: bool = False) -> set[int]:
    """Edge ids E_0 such that the component of ``x`` in g minus E_0 has exactly m vertices.

    ``g`` must be connected and ``1 <= m <= |V|``. Cut size is at most
    ``carve_bound(|V|, d)``.
    """
    xi = int(x) if np.isscalar(x) else g.index_of(x)
    if not 0 <= xi < g.num_vertices:
        raise ValueError(f"root {x} is not a vertex of the subgraph")
    if not 1 <= m <= g.num_vertices:
        raise ValueError(f"m must lie in [1, {g.num_vertices}], got {m}")
    if not g.is_connected():
        raise ValueError("carve needs a connected subgraph")
    piece = _Piece(np.arange(g.num_vertices), np.arange(g.num_edges))
    result = []
    root = xi
    while m < piece.vs.size:
        cut = _bisect(g, piece, debug)
        cut_mask = np.isin(piece.es, cut)
        root_local = int(np.searchsorted(piece.vs, root))
        order, newv, sizes = _reopen_piece(g, piece, cut_mask, root_local)
        sigma = int(np.argmax(sizes >= m))
        # edges reopened after sigma stay closed
        result.append(piece.es[order[sigma:]])
        if sigma > 0:
            root_local = int(newv[sigma - 1])
            m -= int(sizes[sigma - 1])
        root = int(piece.vs[root_local])
        keep = ~cut_mask
        labels, _ = piece.components(g, keep)
        piece = piece.restrict(g, labels == labels[root_local], keep)
    return set(np.concatenate(result).tolist()) if result else set()
