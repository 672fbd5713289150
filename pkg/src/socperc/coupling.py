"""Decreasing monotone coupling of the percolation measures P_{phi_n(b)}.

Independent variables X_{b,e} ~ Bernoulli(exp(-1/n^a)) are attached to every
pair (b, e), b in {0..n^d-1}. The configuration at time b is
omega(b)(e) = min_{b' < b} X_{b',e}, so omega(b) has law P_{phi_n(b)} and the
family decreases in b. Intermediate configurations omega(b, s) apply the
row X_{b,.} to the first s edges only.

X is never stored. Row b of replica j is read from a Philox stream keyed by
the seed, starting at counter block (b * ceil(r/4), j), so any row can be
regenerated on demand.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numba as nb
import numpy as np
from numpy.random import Generator, Philox, SeedSequence

from .lattice import BoxGeometry, edge_order
from .percolation import (
    BOUNDARY,
    CMAX,
    Configuration,
    FunctionalKind,
    _KindParams,
    check_kind,
    functional_from_bits,
    label_clusters,
)
from .separator import LatticeSubgraph, carve


def coupling_key(seed) -> np.ndarray:
    """128-bit Philox key derived from an integer seed (or a SeedSequence)."""
    ss = seed if isinstance(seed, SeedSequence) else SeedSequence(seed)
    return ss.generate_state(2, dtype=np.uint64)


class RowStream:
    """On-demand rows of X for one replica.

    ``row(b)`` returns a boolean vector over edge positions (coupling order)
    that is True where X_{b,e} = 1. Rows are generated in chunks and cached.
    """

    def __init__(self, r: int, q: float, seed=0, replica: int = 0, chunk: int | None = None):
        self.r = int(r)
        self.q = float(q)
        self.key = coupling_key(seed)
        self.replica = int(replica)
        self._blocks = -(-self.r // 4)
        # keep a chunk around a million doubles at most
        self.chunk = chunk or max(1, min(64, (1 << 20) // (4 * self._blocks)))
        self._start = -1
        self._rows = None

    def rows(self, b0: int, count: int) -> np.ndarray:
        """Rows b0..b0+count-1 as a fresh ``(count, r)`` boolean array."""
        gen = Generator(Philox(key=self.key, counter=[b0 * self._blocks, self.replica, 0, 0]))
        u = gen.random(count * 4 * self._blocks).reshape(count, 4 * self._blocks)[:, : self.r]
        return u < self.q

    def row(self, b: int) -> np.ndarray:
        if self._rows is None or not self._start <= b < self._start + self._rows.shape[0]:
            self._start = b
            self._rows = self.rows(b, self.chunk)
        return self._rows[b - self._start]


def _edge_params(box: BoxGeometry):
    order = edge_order(box)
    return order, np.ascontiguousarray(box.edges[order])


class CouplingState:
    """Current point (b, s) of the coupling and the configuration omega(b, s).

    Bits are stored in coupling order (position s-1 is edge e_s); ``config``
    converts back to edge ids.
    """

    def __init__(self, box: BoxGeometry, a: float, seed=0, replica: int = 0):
        self.box = box
        self.a = float(a)
        self.q = math.exp(-1.0 / box.n**self.a)
        if not 0.0 < self.q < 1.0:
            raise ValueError(f"exp(-1/n^a) = {self.q} is not in (0, 1); choose a smaller a")
        self.b = 0
        self.s = 0
        self.order, self.ordered_edges = _edge_params(box)
        self.stream = RowStream(box.num_edges, self.q, seed, replica)
        self.bits = np.ones(box.num_edges, dtype=bool)

    @property
    def r(self) -> int:
        return self.box.num_edges

    @property
    def end(self) -> int:
        return self.box.num_vertices

    @property
    def config(self) -> Configuration:
        bits = np.empty_like(self.bits)
        bits[self.order] = self.bits
        return Configuration(bits)

    def __repr__(self):
        return f"CouplingState(b={self.b}, s={self.s}, open={int(self.bits.sum())}/{self.r})"


def advance_coupling(state: CouplingState) -> CouplingState:
    """One lexicographic step: (b, s) -> (b, s+1), or (b, r) -> (b+1, 0)."""
    if state.s == state.r:
        if state.b + 1 > state.end:
            raise ValueError("the coupling has no time beyond (n^d, 0)")
        state.b += 1
        state.s = 0
        return state
    if state.b >= state.end:
        raise ValueError("the coupling has no time beyond (n^d, 0)")
    if not state.stream.row(state.b)[state.s]:
        state.bits[state.s] = False
    state.s += 1
    return state


def configuration_at(box: BoxGeometry, a: float, b0: int, seed=0, replica: int = 0) -> Configuration:
    """omega(b0) for one replica, computed from rows 0..b0-1 at once."""
    if not 0 <= b0 <= box.num_vertices:
        raise ValueError(f"b0 must lie in [0, {box.num_vertices}]")
    q = math.exp(-1.0 / box.n ** float(a))
    order, _ = _edge_params(box)
    stream = RowStream(box.num_edges, q, seed, replica)
    ordered = stream.rows(0, b0).all(axis=0) if b0 else np.ones(box.num_edges, dtype=bool)
    bits = np.empty_like(ordered)
    bits[order] = ordered
    return Configuration(bits)


# --------------------------------------------------------------------------- #
# trajectory and Z_n


@nb.njit(cache=True, nogil=True)
def _trajectory_chunk(code, edges, bits, rows, b0, boundary_mask, threshold, coords, n, offsets, out_F):
    """Fill out_F[j] = F(omega(b0+j)) until F <= b; returns steps done (negative if stopped)."""
    for j in range(rows.shape[0]):
        F = functional_from_bits(code, edges, bits, boundary_mask, threshold, coords, n, offsets)
        out_F[j] = F
        if F <= b0 + j:
            return -(j + 1)
        for e in range(bits.shape[0]):
            if not rows[j, e]:
                bits[e] = False
    return rows.shape[0]


@dataclass(frozen=True)
class Trajectory:
    """b -> F(omega(b)) from b = 0 up to the first b with F(omega(b)) <= b."""

    b: np.ndarray
    F: np.ndarray
    fixed_point: bool

    @property
    def crossing(self) -> int:
        return int(self.b[-1])


def _coupling_kind(kind: FunctionalKind, box: BoxGeometry):
    if kind.code not in (CMAX, BOUNDARY):
        raise ValueError("the coupling identity for Z_n covers the cmax and boundary functionals only")
    check_kind(kind, box)
    return _KindParams(kind, box)


def coupling_trajectory(box: BoxGeometry, a: float, kind: FunctionalKind, rng=0, replica: int = 0) -> Trajectory:
    """Run the coupling row by row; the fixed-point flag is F(omega(b*)) == b* at the first crossing."""
    params = _coupling_kind(kind, box)
    return _trajectory(box, float(a), params, rng, replica)


def _trajectory(box, a, params, seed, replica):
    q = math.exp(-1.0 / box.n**a)
    _, edges = _edge_params(box)
    stream = RowStream(box.num_edges, q, seed, replica, chunk=8)
    bits = np.ones(box.num_edges, dtype=bool)
    N = box.num_vertices
    Fs = []
    b0 = 0
    chunk = 8
    while True:
        count = min(chunk, N - b0)
        if count == 0:
            # omega(n^d): F <= n^d always ends the trajectory here
            rows = np.ones((1, box.num_edges), dtype=bool)
            count = 1
        else:
            rows = stream.rows(b0, count)
        out = np.empty(count, dtype=np.int64)
        done = _trajectory_chunk(
            params.code, edges, bits, rows, b0, box.boundary_mask, params.threshold, box.coords, box.n, params.offsets, out
        )
        Fs.append(out[: abs(done)])
        if done < 0:
            break
        b0 += count
        chunk = min(2 * chunk, 256)
    F = np.concatenate(Fs)
    b = np.arange(F.size)
    return Trajectory(b, F, bool(F[-1] == b[-1]))


@dataclass(frozen=True)
class Estimate:
    value: float
    stderr: float
    samples: int

    def __iter__(self):
        yield self.value
        yield self.stderr

    def within(self, target: float, k: float = 3.0) -> bool:
        return abs(self.value - target) <= k * self.stderr


def estimate_Zn(box: BoxGeometry, a: float, kind: FunctionalKind, replicas: int, rng=0, first_replica: int = 0) -> Estimate:
    """Fraction of coupling trajectories that hit a fixed point, with its binomial standard error."""
    if replicas < 1:
        raise ValueError("replicas must be >= 1")
    params = _coupling_kind(kind, box)
    hits = 0
    for j in range(first_replica, first_replica + replicas):
        hits += _trajectory(box, float(a), params, rng, j).fixed_point
    p = hits / replicas
    return Estimate(p, math.sqrt(p * (1.0 - p) / replicas), replicas)


# --------------------------------------------------------------------------- #
# stopping times


@nb.njit(cache=True, nogil=True)
def _min_after_single_close(code, edges, bits, boundary_mask, threshold, coords, n, offsets):
    """min over all edges e of F(omega_e), omega_e = omega with e closed."""
    best = np.int64(1) << 62
    any_closed = False
    for e in range(bits.shape[0]):
        if bits[e]:
            bits[e] = False
            F = functional_from_bits(code, edges, bits, boundary_mask, threshold, coords, n, offsets)
            bits[e] = True
            if F < best:
                best = F
        else:
            any_closed = True
    if any_closed:
        F = functional_from_bits(code, edges, bits, boundary_mask, threshold, coords, n, offsets)
        if F < best:
            best = F
    return best


@nb.njit(cache=True, nogil=True)
def _boundary_cluster_max(edges, bits, boundary_mask):
    N = boundary_mask.shape[0]
    labels = np.empty(N, dtype=np.int64)
    sizes = np.empty(N, dtype=np.int64)
    k = label_clusters(N, edges, bits, labels, sizes)
    best = 0
    for v in range(N):
        if boundary_mask[v] and sizes[labels[v]] > best:
            best = sizes[labels[v]]
    return best


@nb.njit(cache=True, nogil=True)
def _check(mode, code, edges, bits, boundary_mask, threshold, coords, n, offsets, thr):
    if mode == 0:
        return _min_after_single_close(code, edges, bits, boundary_mask, threshold, coords, n, offsets) <= thr
    return _boundary_cluster_max(edges, bits, boundary_mask) <= thr


@nb.njit(cache=True, nogil=True)
def _scan_row(mode, code, edges, bits, row, s0, thr, boundary_mask, threshold, coords, n, offsets):
    """First s >= s0 in this row where the stopping condition holds, else -1.

    ``bits`` is omega(b, s0) on entry and omega(b, S) (or omega(b, r)) on exit.
    The condition only needs rechecking where an edge actually closes.
    """
    if _check(mode, code, edges, bits, boundary_mask, threshold, coords, n, offsets, thr):
        return s0
    for s in range(s0 + 1, bits.shape[0] + 1):
        e = s - 1
        if bits[e] and not row[e]:
            bits[e] = False
            if _check(mode, code, edges, bits, boundary_mask, threshold, coords, n, offsets, thr):
                return s
    return -1


@dataclass(frozen=True)
class StoppingRecord:
    """Stopping time (B, S) and, for the boundary functional, (B', S').

    ``value_at_stop`` is |C_max(omega(B,S))| for cmax and C_n(omega(B,S)) (largest
    boundary cluster) for boundary; ``value_at_stop2`` is |M_n(omega(B',S'))|.
    """

    kind: FunctionalKind
    B: int
    S: int
    value_at_stop: int
    B2: int | None = None
    S2: int | None = None
    value_at_stop2: int | None = None

    def sandwich_holds(self) -> bool:
        if self.kind.code == CMAX:
            return self.B + 2 <= self.value_at_stop <= 2 * (self.B + 2)
        return (
            self.B + 2 <= self.value_at_stop <= 2 * self.B + 3
            and (self.B2, self.S2) >= (self.B, self.S)
            and self.value_at_stop2 >= self.B2 + 2
        )


def _scan(box, stream, params, mode, bits, b_start, s_start, thr_of_b, edges):
    for b in range(b_start, box.num_vertices - 1):
        S = _scan_row(
            mode,
            params.code,
            edges,
            bits,
            stream.row(b),
            s_start if b == b_start else 0,
            thr_of_b(b),
            box.boundary_mask,
            params.threshold,
            box.coords,
            box.n,
            params.offsets,
        )
        if S >= 0:
            return b, S
    raise RuntimeError("stopping time not reached; the coupling guarantees it exists")


def _stop_cmax(box, stream, params, bits, edges):
    """Runs to (B, S) for the cmax functional; ``bits`` ends at omega(B, S)."""
    return _scan(box, stream, params, 0, bits, 0, 0, lambda b: b + 2, edges)


def detect_stopping(box: BoxGeometry, a: float, kind: FunctionalKind, rng=0, replica: int = 0) -> StoppingRecord:
    """Lexicographically first stopping pair(s) along one coupling run.

    The existence check over single-edge closures re-analyses the box once per
    open edge, so this is meant for small boxes (n up to about 16).
    """
    params = _coupling_kind(kind, box)
    if box.torus and kind.code == BOUNDARY:
        raise ValueError("boundary functional needs a free box")
    q = math.exp(-1.0 / box.n ** float(a))
    _, edges = _edge_params(box)
    stream = RowStream(box.num_edges, q, rng, replica)
    bits = np.ones(box.num_edges, dtype=bool)
    if kind.code == CMAX:
        B, S = _stop_cmax(box, stream, params, bits, edges)
        value = functional_from_bits(
            CMAX, edges, bits, box.boundary_mask, 0, box.coords, box.n, params.offsets
        )
        return StoppingRecord(kind, B, S, int(value))
    B, S = _scan(box, stream, params, 1, bits, 0, 0, lambda b: 2 * b + 3, edges)
    cn = int(_boundary_cluster_max(edges, bits, box.boundary_mask))
    B2, S2 = _scan(box, stream, params, 0, bits, B, S, lambda b: b + 2, edges)
    m = functional_from_bits(BOUNDARY, edges, bits, box.boundary_mask, 0, box.coords, box.n, params.offsets)
    return StoppingRecord(kind, B, S, cn, B2, S2, int(m))


# --------------------------------------------------------------------------- #
# happy event


@dataclass(frozen=True)
class HappyEventResult:
    occurred: bool
    check: bool
    B: int
    S: int
    cmax_at_stop: int
    cut_size: int
    cmax_final: int

    @property
    def sandwich_holds(self) -> bool:
        return self.B + 2 <= self.cmax_at_stop <= 2 * (self.B + 2)


def happy_cut(box: BoxGeometry, bits_by_id: np.ndarray, m: int):
    """H: edge ids inside the largest cluster whose closing leaves a largest piece of m vertices.

    Returns (cluster vertex ids, H). The root is the smallest vertex id of the
    cluster; ties between largest clusters go to the one with the smallest vertex.
    """
    N = box.num_vertices
    labels = np.empty(N, dtype=np.int64)
    sizes = np.empty(N, dtype=np.int64)
    k = label_clusters(N, box.edges, bits_by_id, labels, sizes)
    c = int(np.argmax(sizes[:k]))
    vs = np.flatnonzero(labels == c)
    inside = bits_by_id & (labels[box.edges[:, 0]] == c)
    eids = np.flatnonzero(inside)
    pts = box.coords[vs].astype(np.int64)
    loc = np.searchsorted(vs, box.edges[eids])
    # vertex ids are row-major, so vs is already sorted like the coordinates
    g = LatticeSubgraph(pts, loc)
    # the subgraph sorts its edge rows; map them back to box edge ids
    pair_to_eid = {(int(u), int(v)): int(e) for (u, v), e in zip(np.sort(loc, axis=1).tolist(), eids.tolist())}
    H_local = carve(g, 0, m)
    H = np.array(sorted(pair_to_eid[tuple(g.edge_index[j].tolist())] for j in H_local), dtype=np.int64)
    return vs, H


def simulate_happy_event(box: BoxGeometry, a: float, rng=0, replica: int = 0) -> HappyEventResult:
    """Check that the happy event forces |C_max(omega(B+2))| = B + 2 on one coupling run."""
    kind = FunctionalKind.cmax()
    params = _coupling_kind(kind, box)
    q = math.exp(-1.0 / box.n ** float(a))
    order, edges = _edge_params(box)
    position = np.empty_like(order)
    position[order] = np.arange(order.size)
    stream = RowStream(box.num_edges, q, rng, replica)
    bits = np.ones(box.num_edges, dtype=bool)
    B, S = _stop_cmax(box, stream, params, bits, edges)

    by_id = np.empty_like(bits)
    by_id[order] = bits
    vs, H = happy_cut(box, by_id, B + 2)
    in_V = np.zeros(box.num_vertices, dtype=bool)
    in_V[vs] = True
    edge_C = np.flatnonzero(in_V[box.edges[:, 0]] & in_V[box.edges[:, 1]])
    row_B = stream.row(B)
    row_B1 = stream.row(B + 1)
    pos_C = position[edge_C]
    pos_H = position[H]
    in_H = np.isin(edge_C, H)
    occurred = bool(
        np.all(row_B[pos_C[pos_C >= S]])
        and not np.any(row_B1[pos_H])
        and np.all(row_B1[pos_C[~in_H]])
    )
    cmax_stop = int(functional_from_bits(CMAX, edges, bits, box.boundary_mask, 0, box.coords, box.n, params.offsets))

    # finish row B from position S, then apply row B+1
    final = bits.copy()
    final[S:] &= row_B[S:]
    final &= row_B1
    cmax_final = int(functional_from_bits(CMAX, edges, final, box.boundary_mask, 0, box.coords, box.n, params.offsets))
    check = (not occurred) or cmax_final == B + 2
    return HappyEventResult(occurred, check, B, S, cmax_stop, int(H.size), cmax_final)
