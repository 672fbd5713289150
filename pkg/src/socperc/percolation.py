"""Bond configurations, cluster analysis and the feedback functionals."""
from __future__ import annotations

import math
import warnings
from collections import Counter
from dataclasses import dataclass

import numba as nb
import numpy as np

from .lattice import BoxGeometry, box_boundary_offsets, build_box

CMAX, BOUNDARY, BNB, BNB_DIAM = 0, 1, 2, 3
_KIND_NAMES = {CMAX: "cmax", BOUNDARY: "boundary", BNB: "bnb", BNB_DIAM: "bnb-diam"}
_KIND_CODES = {v: k for k, v in _KIND_NAMES.items()}


@dataclass(frozen=True)
class FunctionalKind:
    """Which feedback statistic F_n drives the percolation parameter.

    ``code`` is one of CMAX, BOUNDARY, BNB, BNB_DIAM; ``b`` is the exponent of
    the size (or diameter) threshold n^b, used by the two BNB kinds only.
    """

    code: int
    b: float | None = None

    def __post_init__(self):
        if self.code not in _KIND_NAMES:
            raise ValueError(f"unknown functional code {self.code}")
        if self.code in (BNB, BNB_DIAM):
            if self.b is None or not 0.0 < self.b < 1.0:
                raise ValueError(f"{self.name} needs an exponent 0 < b < 1, got {self.b}")
        elif self.b is not None:
            raise ValueError(f"{self.name} takes no exponent")

    @property
    def name(self) -> str:
        return _KIND_NAMES[self.code]

    @classmethod
    def cmax(cls):
        return cls(CMAX)

    @classmethod
    def boundary(cls):
        return cls(BOUNDARY)

    @classmethod
    def bnb(cls, b: float):
        return cls(BNB, float(b))

    @classmethod
    def bnb_diam(cls, b: float):
        return cls(BNB_DIAM, float(b))

    @classmethod
    def parse(cls, name: str, b: float | None = None):
        """Build a kind from its CLI name (``cmax``, ``boundary``, ``bnb``, ``bnb-diam``)."""
        key = name.strip().lower().replace("_", "-")
        if key not in _KIND_CODES:
            raise ValueError(f"unknown functional {name!r}; expected one of {sorted(_KIND_CODES)}")
        code = _KIND_CODES[key]
        return cls(code, None if code in (CMAX, BOUNDARY) else b)

    def __str__(self):
        return self.name if self.b is None else f"{self.name}(b={self.b:g})"


def size_threshold(n: int, b: float) -> int:
    """ceil(n**b), robust to floating error when n**b is an integer."""
    x = float(n) ** b
    t = math.ceil(x - 1e-9 * x)
    return max(t, 0)


def check_kind(kind: FunctionalKind, box: BoxGeometry) -> None:
    if box.torus and kind.code != CMAX:
        raise ValueError(f"functional {kind.name} is only defined on a box with free boundary")


# --------------------------------------------------------------------------- #
# configurations


class Configuration:
    """Open/closed state of every edge of a box, in edge-id order.

    ``open_count`` is kept equal to the number of open edges; mutate only
    through :meth:`set_edge` or build new configurations with the
    ``opened``/``closed`` helpers.
    """

    __slots__ = ("_bits", "_open")

    def __init__(self, bits):
        bits = np.array(bits, dtype=bool, copy=True).ravel()
        self._bits = bits
        self._open = int(bits.sum())

    @classmethod
    def all_open(cls, box: BoxGeometry):
        return cls(np.ones(box.num_edges, dtype=bool))

    @classmethod
    def all_closed(cls, box: BoxGeometry):
        return cls(np.zeros(box.num_edges, dtype=bool))

    @property
    def bits(self) -> np.ndarray:
        view = self._bits.view()
        view.setflags(write=False)
        return view

    @property
    def open_count(self) -> int:
        return self._open

    def __len__(self):
        return self._bits.size

    def __getitem__(self, e):
        return bool(self._bits[e])

    def set_edge(self, e: int, value: bool) -> None:
        value = bool(value)
        if self._bits[e] != value:
            self._bits[e] = value
            self._open += 1 if value else -1

    def copy(self):
        return Configuration(self._bits)

    def opened(self, edges):
        """Copy with the given edge (or iterable of edges) opened."""
        out = self.copy()
        for e in np.atleast_1d(edges):
            out.set_edge(int(e), True)
        return out

    def closed(self, edges):
        """Copy with the given edge (or iterable of edges) closed."""
        out = self.copy()
        for e in np.atleast_1d(edges):
            out.set_edge(int(e), False)
        return out

    def __eq__(self, other):
        if not isinstance(other, Configuration):
            return NotImplemented
        return np.array_equal(self._bits, other._bits)

    def __le__(self, other):
        return bool(np.all(self._bits <= other._bits))

    def __ge__(self, other):
        return bool(np.all(self._bits >= other._bits))

    __hash__ = None

    def __repr__(self):
        return f"Configuration(r={self._bits.size}, open={self._open})"


def dumps_configuration(box: BoxGeometry, config: Configuration) -> str:
    """Header line ``d n torus r`` followed by the hex-encoded bitstring."""
    _check_sizes(box, config)
    packed = np.packbits(config.bits.astype(np.uint8), bitorder="big")
    return f"{box.d} {box.n} {int(box.torus)} {box.num_edges}\n{packed.tobytes().hex()}\n"


def loads_configuration(text: str) -> tuple[BoxGeometry, Configuration]:
    lines = [ln.strip() for ln in text.strip().splitlines() if ln.strip()]
    if len(lines) < 2:
        raise ValueError("configuration dump needs a header line and a hex line")
    try:
        d, n, torus, r = (int(tok) for tok in lines[0].split())
    except ValueError as exc:
        raise ValueError(f"bad header {lines[0]!r}; expected 'd n torus r'") from exc
    box = build_box(d, n, bool(torus))
    if box.num_edges != r:
        raise ValueError(f"header says r={r} but the box has {box.num_edges} edges")
    raw = np.frombuffer(bytes.fromhex(lines[1]), dtype=np.uint8)
    bits = np.unpackbits(raw, bitorder="big")
    if bits.size < r or bits[r:].any():
        raise ValueError("hex payload does not match the edge count")
    return box, Configuration(bits[:r].astype(bool))


def _check_sizes(box: BoxGeometry, config: Configuration) -> None:
    if len(config) != box.num_edges:
        raise ValueError(f"configuration has {len(config)} bits but the box has {box.num_edges} edges")


# --------------------------------------------------------------------------- #
# cluster engine


@nb.njit(cache=True, nogil=True)
def _find(parent, x):
    while parent[x] != x:
        parent[x] = parent[parent[x]]
        x = parent[x]
    return x


@nb.njit(cache=True, nogil=True)
def label_clusters(num_vertices, edges, bits, labels, sizes):
    """Union-find labelling of the open subgraph.

    Fills ``labels`` with consecutive cluster ids (in order of first vertex)
    and ``sizes[:k]`` with cluster sizes; returns the number of clusters k.
    """
    parent = np.arange(num_vertices)
    rank = np.ones(num_vertices, dtype=np.int64)
    for e in range(edges.shape[0]):
        if bits[e]:
            ru = _find(parent, edges[e, 0])
            rv = _find(parent, edges[e, 1])
            if ru != rv:
                if rank[ru] < rank[rv]:
                    ru, rv = rv, ru
                parent[rv] = ru
                rank[ru] += rank[rv]
    k = 0
    root_label = np.full(num_vertices, -1, dtype=np.int64)
    for v in range(num_vertices):
        r = _find(parent, v)
        if root_label[r] < 0:
            root_label[r] = k
            sizes[k] = 0
            k += 1
        labels[v] = root_label[r]
        sizes[root_label[r]] += 1
    return k


@nb.njit(cache=True, nogil=True)
def diam_count(labels, coords, n, offsets):
    """Number of x whose cluster meets (x + offsets) inside the box."""
    N, d = coords.shape
    lo = -(n // 2)
    count = 0
    for x in range(N):
        hit = False
        for j in range(offsets.shape[0]):
            y = 0
            inside = True
            for i in range(d):
                c = coords[x, i] + offsets[j, i] - lo
                if c < 0 or c >= n:
                    inside = False
                    break
                y = y * n + c
            if inside and labels[y] == labels[x]:
                hit = True
                break
        if hit:
            count += 1
    return count


@nb.njit(cache=True, nogil=True)
def functional_from_labels(code, labels, sizes, k, boundary_mask, threshold, coords, n, offsets):
    """Value of the functional ``code`` given a labelling with k clusters."""
    if code == 0:
        best = 0
        for c in range(k):
            if sizes[c] > best:
                best = sizes[c]
        return best
    if code == 1:
        touch = np.zeros(k, dtype=np.bool_)
        for v in range(labels.shape[0]):
            if boundary_mask[v]:
                touch[labels[v]] = True
        total = 0
        for c in range(k):
            if touch[c]:
                total += sizes[c]
        return total
    if code == 2:
        total = 0
        for c in range(k):
            if sizes[c] >= threshold:
                total += sizes[c]
        return total
    return diam_count(labels, coords, n, offsets)


class _KindParams:
    """Per-(kind, box) constants handed to the numba kernels."""

    def __init__(self, kind: FunctionalKind, box: BoxGeometry):
        self.code = kind.code
        self.threshold = 0
        self.offsets = np.zeros((0, box.d), dtype=np.int64)
        if kind.code in (BNB, BNB_DIAM):
            self.threshold = size_threshold(box.n, kind.b)
            if self.threshold <= 1:
                warnings.warn(
                    f"n^b = {box.n}^{kind.b} <= 1: every vertex counts, the functional is constant",
                    RuntimeWarning,
                    stacklevel=3,
                )
            if kind.code == BNB_DIAM:
                self.offsets = box_boundary_offsets(self.threshold, box.d)


@dataclass(frozen=True, eq=False)
class ClusterAnalysis:
    """Connected components of the open subgraph of one configuration.

    ``label[v]`` is the cluster id of vertex v; ``cluster_sizes[c]`` the size
    of cluster c. ``boundary_connected`` is a vertex mask of M_n (boundary
    vertices always included) and ``cn_size`` the largest cluster touching
    the boundary (0 on a torus).
    """

    label: np.ndarray
    cluster_sizes: np.ndarray
    cmax_size: int
    boundary_connected: np.ndarray
    cn_size: int

    @property
    def num_clusters(self) -> int:
        return self.cluster_sizes.size

    @property
    def sizes(self) -> Counter:
        """Multiset of cluster sizes as ``{size: count}``."""
        vals, counts = np.unique(self.cluster_sizes, return_counts=True)
        return Counter(dict(zip(vals.tolist(), counts.tolist())))

    @property
    def boundary_count(self) -> int:
        return int(self.boundary_connected.sum())

    def cluster_of(self, v: int) -> np.ndarray:
        return np.flatnonzero(self.label == self.label[v])


def analyze(box: BoxGeometry, config: Configuration) -> ClusterAnalysis:
    _check_sizes(box, config)
    N = box.num_vertices
    labels = np.empty(N, dtype=np.int64)
    sizes = np.empty(N, dtype=np.int64)
    k = label_clusters(N, box.edges, config.bits, labels, sizes)
    sizes = sizes[:k].copy()
    bnd = box.boundary
    if bnd.size:
        touching = np.zeros(k, dtype=bool)
        touching[labels[bnd]] = True
        boundary_connected = touching[labels]
        cn = int(sizes[touching].max())
    else:
        boundary_connected = np.zeros(N, dtype=bool)
        cn = 0
    return ClusterAnalysis(labels, sizes, int(sizes.max()), boundary_connected, cn)


def evaluate_functional(kind: FunctionalKind, box: BoxGeometry, analysis: ClusterAnalysis) -> int:
    check_kind(kind, box)
    params = _KindParams(kind, box)
    return int(
        functional_from_labels(
            params.code,
            analysis.label,
            analysis.cluster_sizes,
            analysis.num_clusters,
            box.boundary_mask,
            params.threshold,
            box.coords,
            box.n,
            params.offsets,
        )
    )


def functional_value(kind: FunctionalKind, box: BoxGeometry, config: Configuration) -> int:
    """Shortcut for ``evaluate_functional(kind, box, analyze(box, config))``."""
    return evaluate_functional(kind, box, analyze(box, config))


def phi_n(x, n: int, a: float):
    """Feedback map exp(-x / n^a); works elementwise on arrays."""
    x = np.asarray(x, dtype=float)
    if np.any(x < 0):
        raise ValueError("phi_n is defined for x >= 0")
    out = np.exp(-x / float(n) ** a)
    return float(out) if out.ndim == 0 else out


def feedback_p(kind: FunctionalKind, box: BoxGeometry, config: Configuration, a: float) -> float:
    return phi_n(functional_value(kind, box, config), box.n, a)


def log_weight_counts(open_count: int, r: int, p: float) -> float:
    """log of p^o (1-p)^(r-o), with empty factors dropped and -inf for zero weight."""
    closed = r - open_count
    total = 0.0
    if open_count:
        if p <= 0.0:
            return -math.inf
        total += open_count * math.log(p)
    if closed:
        if p >= 1.0:
            return -math.inf
        total += closed * math.log1p(-p)
    return total


def log_weight(box: BoxGeometry, config: Configuration, p: float) -> float:
    _check_sizes(box, config)
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"p must lie in [0, 1], got {p}")
    return log_weight_counts(config.open_count, box.num_edges, p)


def log_weight_feedback(open_count: int, r: int, F: int, n: int, a: float) -> float:
    """log P_p(omega) at p = phi_n(F), without forming 1 - p by subtraction."""
    closed = r - open_count
    log_p = -F / float(n) ** a
    total = open_count * log_p if open_count else 0.0
    if closed:
        if F == 0:
            return -math.inf
        total += closed * math.log(-math.expm1(log_p))
    return total


def sample_bernoulli(box: BoxGeometry, p: float, rng) -> Configuration:
    """i.i.d. Bernoulli(p) edges; ``rng`` is a numpy Generator or a seed."""
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"p must lie in [0, 1], got {p}")
    rng = np.random.default_rng(rng)
    return Configuration(rng.random(box.num_edges) < p)


@nb.njit(cache=True, nogil=True)
def functional_from_bits(code, edges, bits, boundary_mask, threshold, coords, n, offsets):
    """Functional value straight from an edge bit vector."""
    N = coords.shape[0]
    labels = np.empty(N, dtype=np.int64)
    sizes = np.empty(N, dtype=np.int64)
    k = label_clusters(N, edges, bits, labels, sizes)
    return functional_from_labels(code, labels, sizes, k, boundary_mask, threshold, coords, n, offsets)
