"""Single-edge Metropolis-Hastings chain targeting mu_n(omega) ~ P_{p_n(omega)}(omega).

The chain keeps cluster labels up to date incrementally:

* opening an edge between two clusters relabels the smaller one;
* closing an edge runs two interleaved searches from its endpoints, which
  either meet (no split) or exhaust the smaller side first.

The proposal's functional value is derived from the cluster sizes involved
(and a size histogram for |C_max|) before anything is committed, so a
rejected proposal costs only the search. The diameter variant of B_n^b has
no local formula: its proposals are committed, re-counted, and reverted on
rejection.

A reference mode recomputes all clusters from scratch after every proposal;
both modes consume the same random stream.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numba as nb
import numpy as np

from .lattice import BoxGeometry
from .percolation import (
    BNB,
    BNB_DIAM,
    BOUNDARY,
    CMAX,
    ClusterAnalysis,
    Configuration,
    FunctionalKind,
    _KindParams,
    analyze,
    check_kind,
    diam_count,
    evaluate_functional,
    functional_from_bits,
    label_clusters,
    log_weight_feedback,
)

# random numbers are drawn in blocks of this many proposals, independent of
# how the caller slices the run, so a seed fixes the whole trajectory
RANDOM_BLOCK = 1 << 16

INCREMENTAL = 0
REFERENCE = 1


@nb.njit(cache=True, nogil=True)
def _log_w(o, r, F, na):
    log_p = -F / na
    closed = r - o
    total = o * log_p if o > 0 else 0.0
    if closed > 0:
        if F == 0:
            return -np.inf
        total += closed * np.log(-np.expm1(log_p))
    return total


@nb.njit(cache=True, nogil=True)
def _contrib(code, size, bc, thr):
    if code == 1:
        return size if bc > 0 else 0
    if code == 2:
        return size if size >= thr else 0
    return 0


@nb.njit(cache=True, nogil=True)
def _split_search(u, v, e, bits, nbr, nbr_edge, mark, stamp, qa, qb):
    """Interleaved searches from u and v in the open graph without edge e.

    Returns 0 if they meet, 1 if u's side was exhausted (its vertices in
    qa[:count]), 2 if v's side was exhausted (in qb[:count]); plus count.
    """
    sa = stamp
    sb = stamp + 1
    mark[u] = sa
    mark[v] = sb
    qa[0] = u
    qb[0] = v
    ha = 0
    ta = 1
    hb = 0
    tb = 1
    deg = nbr.shape[1]
    while True:
        if ha == ta:
            return 1, ta
        x = qa[ha]
        ha += 1
        for k in range(deg):
            w = nbr[x, k]
            if w < 0:
                continue
            f = nbr_edge[x, k]
            if f == e or not bits[f]:
                continue
            if mark[w] == sb:
                return 0, 0
            if mark[w] != sa:
                mark[w] = sa
                qa[ta] = w
                ta += 1
        if hb == tb:
            return 2, tb
        x = qb[hb]
        hb += 1
        for k in range(deg):
            w = nbr[x, k]
            if w < 0:
                continue
            f = nbr_edge[x, k]
            if f == e or not bits[f]:
                continue
            if mark[w] == sa:
                return 0, 0
            if mark[w] != sb:
                mark[w] = sb
                qb[tb] = w
                tb += 1


@nb.njit(cache=True, nogil=True)
def _collect(start, bits, nbr, nbr_edge, mark, stamp, out):
    """All vertices of the open cluster of ``start`` into out; returns count."""
    mark[start] = stamp
    out[0] = start
    head = 0
    tail = 1
    deg = nbr.shape[1]
    while head < tail:
        x = out[head]
        head += 1
        for k in range(deg):
            w = nbr[x, k]
            if w < 0:
                continue
            if not bits[nbr_edge[x, k]]:
                continue
            if mark[w] != stamp:
                mark[w] = stamp
                out[tail] = w
                tail += 1
    return tail


@nb.njit(cache=True, nogil=True)
def _cmax_after_split(cmax, hist, S, s1, s2):
    if S < cmax or hist[cmax] >= 2:
        return cmax
    best = s1 if s1 > s2 else s2
    t = S - 1
    while t > best:
        if hist[t] > 0:
            return t
        t -= 1
    return best


@nb.njit(cache=True, nogil=True)
def _relabel(verts, count, new_id, label):
    for i in range(count):
        label[verts[i]] = new_id


@nb.njit(cache=True, nogil=True)
def _count_boundary(verts, count, boundary_mask):
    c = 0
    for i in range(count):
        if boundary_mask[verts[i]]:
            c += 1
    return c


@nb.njit(cache=True, nogil=True)
def _rescan_cmax(hist, cmax):
    t = cmax
    while t > 0 and hist[t] == 0:
        t -= 1
    return t


@nb.njit(cache=True, nogil=True)
def _apply_split(c, verts, count, bx, label, csize, bcount, hist, free, top, sc, thr):
    """Move ``verts`` out of cluster c into a fresh id; returns that id."""
    S = csize[c]
    bc = bcount[c]
    nid = free[top[0] - 1]
    top[0] -= 1
    _relabel(verts, count, nid, label)
    csize[c] = S - count
    csize[nid] = count
    bcount[c] = bc - bx
    bcount[nid] = bx
    hist[S] -= 1
    hist[S - count] += 1
    hist[count] += 1
    sc[3] += _contrib(1, count, bx, thr) + _contrib(1, S - count, bc - bx, thr) - _contrib(1, S, bc, thr)
    sc[4] += _contrib(2, count, bx, thr) + _contrib(2, S - count, bc - bx, thr) - _contrib(2, S, bc, thr)
    if S == sc[2] and hist[S] == 0:
        sc[2] = _rescan_cmax(hist, S)
    return nid


@nb.njit(cache=True, nogil=True)
def _apply_merge(keep, gone, verts, count, label, csize, bcount, hist, free, top, sc, thr):
    """Relabel ``verts`` (all of cluster ``gone``) into cluster ``keep``."""
    s1 = csize[keep]
    s2 = csize[gone]
    b1 = bcount[keep]
    b2 = bcount[gone]
    _relabel(verts, count, keep, label)
    csize[keep] = s1 + s2
    csize[gone] = 0
    bcount[keep] = b1 + b2
    bcount[gone] = 0
    free[top[0]] = gone
    top[0] += 1
    hist[s1] -= 1
    hist[s2] -= 1
    hist[s1 + s2] += 1
    sc[3] += _contrib(1, s1 + s2, b1 + b2, thr) - _contrib(1, s1, b1, thr) - _contrib(1, s2, b2, thr)
    sc[4] += _contrib(2, s1 + s2, b1 + b2, thr) - _contrib(2, s1, b1, thr) - _contrib(2, s2, b2, thr)
    if s1 + s2 > sc[2]:
        sc[2] = s1 + s2


@nb.njit(cache=True, nogil=True)
def _merge_now(u, v, bits, nbr, nbr_edge, mark, stampbox, buf, label, csize, bcount, hist, free, top, sc, thr):
    """Open the edge u-v joining two clusters; the smaller one (ties: v's) is relabelled.

    Returns (kept id, relabelled id, count); the moved vertices stay in buf[:count].
    """
    cu = label[u]
    cv = label[v]
    if csize[cu] < csize[cv]:
        keep = cv
        gone = cu
        root = u
    else:
        keep = cu
        gone = cv
        root = v
    stamp = stampbox[0]
    stampbox[0] += 2
    cnt = _collect(root, bits, nbr, nbr_edge, mark, stamp, buf)
    _apply_merge(keep, gone, buf, cnt, label, csize, bcount, hist, free, top, sc, thr)
    return keep, gone, cnt


@nb.njit(cache=True, nogil=True)
def _mh_incremental(
    props, us, start, stop, code, na, edges, nbr, nbr_edge, boundary_mask, thr, coords, n, offsets,
    bits, label, csize, bcount, hist, free, top, sc, logw, mark, stampbox, qa, qb,
    record_every, phase, rec_F, trace_F, trace_acc,
):
    """Proposals start..stop-1 of the random block. ``sc`` = [open, F, cmax, M, B]."""
    r = edges.shape[0]
    accepted = 0
    nrec = 0
    for i in range(start, stop):
        e = props[i]
        u = edges[e, 0]
        v = edges[e, 1]
        F = sc[1]
        closing = bits[e]
        o2 = sc[0] - 1 if closing else sc[0] + 1
        newF = F
        move = 0  # 0: clusters unchanged, 1: split, 2: merge
        count = 0
        bx = 0
        keep = 0
        cnt = 0
        c = label[u]
        verts = qa
        if closing:
            stamp = stampbox[0]
            stampbox[0] += 2
            side, count = _split_search(u, v, e, bits, nbr, nbr_edge, mark, stamp, qa, qb)
            if side != 0:
                move = 1
                if side == 2:
                    verts = qb
                bx = _count_boundary(verts, count, boundary_mask)
        elif label[u] != label[v]:
            move = 2

        trial = False
        if move == 1:
            S = csize[c]
            bc = bcount[c]
            if code == 0:
                newF = _cmax_after_split(sc[2], hist, S, count, S - count)
            elif code == 1 or code == 2:
                newF = F - _contrib(code, S, bc, thr) + _contrib(code, count, bx, thr) + _contrib(code, S - count, bc - bx, thr)
            else:
                bits[e] = False
                _apply_split(c, verts, count, bx, label, csize, bcount, hist, free, top, sc, thr)
                trial = True
                newF = diam_count(label, coords, n, offsets)
        elif move == 2:
            cu = label[u]
            cv = label[v]
            s1 = csize[cu]
            s2 = csize[cv]
            if code == 0:
                newF = max(sc[2], s1 + s2)
            elif code == 1 or code == 2:
                b1 = bcount[cu]
                b2 = bcount[cv]
                newF = F - _contrib(code, s1, b1, thr) - _contrib(code, s2, b2, thr) + _contrib(code, s1 + s2, b1 + b2, thr)
            else:
                keep, _, cnt = _merge_now(u, v, bits, nbr, nbr_edge, mark, stampbox, qa, label, csize, bcount, hist, free, top, sc, thr)
                bits[e] = True
                trial = True
                newF = diam_count(label, coords, n, offsets)

        logw2 = _log_w(o2, r, newF, na)
        accept = False
        if logw2 > -np.inf:
            accept = us[i] < np.exp(logw2 - logw[0])
        if accept:
            accepted += 1
            if not trial:
                if move == 1:
                    bits[e] = False
                    _apply_split(c, verts, count, bx, label, csize, bcount, hist, free, top, sc, thr)
                elif move == 2:
                    _merge_now(u, v, bits, nbr, nbr_edge, mark, stampbox, qa, label, csize, bcount, hist, free, top, sc, thr)
                    bits[e] = True
                else:
                    bits[e] = not closing
            sc[0] = o2
            sc[1] = newF
            logw[0] = logw2
        elif trial:
            if move == 1:
                # put the moved side back into c
                _apply_merge(c, label[verts[0]], verts, count, label, csize, bcount, hist, free, top, sc, thr)
                bits[e] = True
            else:
                bits[e] = False
                moved_b = _count_boundary(qa, cnt, boundary_mask)
                _apply_split(keep, qa, cnt, moved_b, label, csize, bcount, hist, free, top, sc, thr)
        if trace_F.shape[0] > 0:
            trace_F[i - start] = sc[1]
            trace_acc[i - start] = accept
        if record_every > 0 and (phase + i - start + 1) % record_every == 0:
            rec_F[nrec] = sc[1]
            nrec += 1
    return accepted


@nb.njit(cache=True, nogil=True)
def _mh_reference(
    props, us, start, stop, code, na, edges, boundary_mask, thr, coords, n, offsets,
    bits, sc, logw, record_every, phase, rec_F, trace_F, trace_acc,
):
    r = edges.shape[0]
    accepted = 0
    nrec = 0
    for i in range(start, stop):
        e = props[i]
        o2 = sc[0] - 1 if bits[e] else sc[0] + 1
        bits[e] = not bits[e]
        newF = functional_from_bits(code, edges, bits, boundary_mask, thr, coords, n, offsets)
        logw2 = _log_w(o2, r, newF, na)
        accept = False
        if logw2 > -np.inf:
            accept = us[i] < np.exp(logw2 - logw[0])
        if accept:
            accepted += 1
            sc[0] = o2
            sc[1] = newF
            logw[0] = logw2
        else:
            bits[e] = not bits[e]
        if trace_F.shape[0] > 0:
            trace_F[i - start] = sc[1]
            trace_acc[i - start] = accept
        if record_every > 0 and (phase + i - start + 1) % record_every == 0:
            rec_F[nrec] = sc[1]
            nrec += 1
    return accepted


@dataclass
class ChainStats:
    proposed: int = 0
    accepted: int = 0
    sweeps: int = 0

    @property
    def acceptance_rate(self) -> float:
        return self.accepted / self.proposed if self.proposed else float("nan")


class ChainState:
    """Metropolis chain over configurations of one box, with cached clusters.

    ``F`` and ``log_w`` always describe ``config``; ``analysis`` rebuilds a
    :class:`ClusterAnalysis` from the maintained labels.
    """

    def __init__(self, box: BoxGeometry, kind: FunctionalKind, a: float, bits, seed=0, mode: int = INCREMENTAL):
        check_kind(kind, box)
        if a <= 0:
            raise ValueError("a must be positive")
        self.box = box
        self.kind = kind
        self.a = float(a)
        self.mode = mode
        self.params = _KindParams(kind, box)
        self.na = float(box.n) ** self.a
        self.seed = seed
        self.rng = np.random.default_rng(seed)
        self._props = np.zeros(0, dtype=np.int64)
        self._us = np.zeros(0)
        self._pos = 0
        self.stats = ChainStats()
        self._load(np.array(bits, dtype=bool))

    def _load(self, bits):
        box = self.box
        N = box.num_vertices
        self.bits = bits
        self.label = np.empty(N, dtype=np.int64)
        sizes = np.empty(N, dtype=np.int64)
        k = label_clusters(N, box.edges, bits, self.label, sizes)
        self.csize = np.zeros(N, dtype=np.int64)
        self.csize[:k] = sizes[:k]
        self.bcount = np.bincount(self.label[box.boundary_mask], minlength=N).astype(np.int64)
        self.hist = np.bincount(sizes[:k], minlength=N + 1).astype(np.int64)
        # unused cluster ids, popped from the end
        self.free = np.zeros(N, dtype=np.int64)
        self.free[: N - k] = np.arange(N - 1, k - 1, -1)
        self.top = np.array([N - k], dtype=np.int64)
        thr = self.params.threshold
        touch = self.bcount[:k] > 0
        F = evaluate_functional(self.kind, box, self._analysis_from_arrays())
        self.sc = np.array(
            [int(bits.sum()), F, int(sizes[:k].max()), int(sizes[:k][touch].sum()), int(sizes[:k][sizes[:k] >= thr].sum())],
            dtype=np.int64,
        )
        self.logw = np.array([log_weight_feedback(int(bits.sum()), box.num_edges, F, box.n, self.a)])
        if self.logw[0] == -math.inf:
            raise ValueError("the chain cannot start from a zero-weight configuration")
        self.mark = np.zeros(N, dtype=np.int64)
        self.stampbox = np.array([1], dtype=np.int64)
        self.qa = np.empty(N, dtype=np.int64)
        self.qb = np.empty(N, dtype=np.int64)

    def _analysis_from_arrays(self) -> ClusterAnalysis:
        # compact ids into 0..k-1 in order of first vertex
        _, first, inv = np.unique(self.label, return_index=True, return_inverse=True)
        rank = np.argsort(np.argsort(first))
        labels = rank[inv]
        sizes = np.bincount(labels)
        bnd = self.box.boundary_mask
        if bnd.any():
            touching = np.zeros(sizes.size, dtype=bool)
            touching[labels[bnd]] = True
            bc = touching[labels]
            cn = int(sizes[touching].max())
        else:
            bc = np.zeros(labels.size, dtype=bool)
            cn = 0
        return ClusterAnalysis(labels, sizes, int(sizes.max()), bc, cn)

    @property
    def config(self) -> Configuration:
        return Configuration(self.bits.copy())

    @property
    def analysis(self) -> ClusterAnalysis:
        return self._analysis_from_arrays()

    @property
    def F(self) -> int:
        return int(self.sc[1])

    @property
    def log_w(self) -> float:
        return float(self.logw[0])

    @property
    def p_n(self) -> float:
        return math.exp(-self.F / self.na)

    def copy(self, mode: int | None = None) -> "ChainState":
        """Independent copy that continues the same random stream."""
        other = object.__new__(ChainState)
        other.__dict__.update(self.__dict__)
        for name in ("bits", "label", "csize", "bcount", "hist", "free", "top", "sc", "logw", "mark",
                     "stampbox", "qa", "qb", "_props", "_us"):
            setattr(other, name, getattr(self, name).copy())
        other.rng = np.random.default_rng()
        other.rng.bit_generator.state = self.rng.bit_generator.state
        other.stats = ChainStats(**vars(self.stats))
        if mode is not None:
            other.mode = mode
        return other

    def coherent(self) -> bool:
        """Compare the cached state with a fresh analysis of ``config``."""
        fresh = analyze(self.box, self.config)
        F = evaluate_functional(self.kind, self.box, fresh)
        lw = log_weight_feedback(int(self.bits.sum()), self.box.num_edges, F, self.box.n, self.a)
        same_partition = np.array_equal(self._analysis_from_arrays().label, fresh.label)
        return bool(
            F == self.F
            and lw == self.log_w
            and self.sc[0] == self.bits.sum()
            and same_partition
            and self.sc[2] == fresh.cmax_size
        )

    # proposals -------------------------------------------------------------

    def _refill(self):
        self._props = self.rng.integers(0, self.box.num_edges, size=RANDOM_BLOCK)
        self._us = self.rng.random(RANDOM_BLOCK)
        self._pos = 0

    def _run(self, steps: int, record_every: int = 0, trace: bool = False):
        """Advance ``steps`` proposals; returns (recorded F values, trace F, trace accepted)."""
        rec = np.empty(steps // record_every if record_every else 0, dtype=np.int64)
        tF = np.empty(steps if trace else 0, dtype=np.int64)
        tA = np.empty(steps if trace else 0, dtype=np.bool_)
        done = 0
        nrec = 0
        box, p = self.box, self.params
        while done < steps:
            if self._pos >= self._props.size:
                self._refill()
            take = min(steps - done, self._props.size - self._pos)
            # keep record boundaries aligned with the global step count
            phase = done % record_every if record_every else 0
            rec_here = (phase + take) // record_every if record_every else 0
            sub_rec = rec[nrec : nrec + rec_here]
            sub_tF = tF[done : done + take] if trace else tF
            sub_tA = tA[done : done + take] if trace else tA
            if self.mode == INCREMENTAL:
                acc = _mh_incremental(
                    self._props, self._us, self._pos, self._pos + take, p.code, self.na, box.edges, box.nbr,
                    box.nbr_edge, box.boundary_mask, p.threshold, box.coords, box.n, p.offsets, self.bits,
                    self.label, self.csize, self.bcount, self.hist, self.free, self.top, self.sc, self.logw,
                    self.mark, self.stampbox, self.qa, self.qb, record_every, phase, sub_rec, sub_tF, sub_tA,
                )
            else:
                acc = _mh_reference(
                    self._props, self._us, self._pos, self._pos + take, p.code, self.na, box.edges,
                    box.boundary_mask, p.threshold, box.coords, box.n, p.offsets, self.bits, self.sc, self.logw,
                    record_every, phase, sub_rec, sub_tF, sub_tA,
                )
            nrec += rec_here
            self._pos += take
            self.stats.proposed += take
            self.stats.accepted += acc
            done += take
        return rec, tF, tA


def init_chain(box: BoxGeometry, kind: FunctionalKind, a: float, seed=0, start: str = "open", mode: int = INCREMENTAL) -> ChainState:
    """Chain at the all-open configuration (``start="open"``).

    ``start="closed"`` begins from the all-closed configuration and
    ``start="random"`` from a Bernoulli(1/2) draw; both are for mixing
    diagnostics and fail if the start has zero weight.
    """
    r = box.num_edges
    if start == "open":
        bits = np.ones(r, dtype=bool)
    elif start == "closed":
        bits = np.zeros(r, dtype=bool)
    elif start == "random":
        bits = np.random.default_rng(np.random.SeedSequence(seed).spawn(1)[0]).random(r) < 0.5
    else:
        raise ValueError(f"unknown start {start!r}")
    return ChainState(box, kind, a, bits, seed, mode)


def mh_step(state: ChainState) -> tuple[ChainState, bool]:
    """One proposal: flip a uniform edge, accept with probability min(1, w'/w)."""
    _, _, acc = state._run(1, trace=True)
    return state, bool(acc[0])


@dataclass(frozen=True)
class ChainSamples:
    sweep: np.ndarray
    F: np.ndarray
    p_n: np.ndarray

    def __len__(self):
        return self.F.size


def run_chain(state: ChainState, sweeps: int, burn_in: int = 0, thin: int = 1) -> ChainSamples:
    """Run ``sweeps`` sweeps of r proposals; keep (F, p_n) every ``thin`` sweeps after ``burn_in``."""
    if not sweeps > burn_in >= 0:
        raise ValueError("need sweeps > burn_in >= 0")
    if thin < 1:
        raise ValueError("thin must be >= 1")
    r = state.box.num_edges
    if burn_in:
        state._run(burn_in * r)
    first = state.stats.sweeps + burn_in
    state.stats.sweeps = first
    kept, _, _ = state._run((sweeps - burn_in) * r, record_every=thin * r)
    state.stats.sweeps += sweeps - burn_in
    sweep = first + thin * np.arange(1, kept.size + 1)
    return ChainSamples(sweep, kept, np.exp(-kept / state.na))


def recompute_modes_agree(state: ChainState, flips: int) -> bool:
    """Replay the same proposals incrementally and by full recomputation; compare every step."""
    if flips == 0:
        return True
    inc = state.copy(mode=INCREMENTAL)
    ref = state.copy(mode=REFERENCE)
    _, F1, A1 = inc._run(flips, trace=True)
    _, F2, A2 = ref._run(flips, trace=True)
    return bool(
        np.array_equal(F1, F2)
        and np.array_equal(A1, A2)
        and inc.log_w == ref.log_w
        and np.array_equal(inc.bits, ref.bits)
        and inc.coherent()
    )


def run_chains(box, kind, a, chains: int, sweeps: int, burn_in: int, thin: int, seed=0, start="open", workers: int = 1):
    """Independent chains seeded from one SeedSequence; returns a list of ChainSamples by chain id."""
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    seeds = ss.spawn(chains)

    def one(i):
        st = init_chain(box, kind, a, seeds[i], start=start)
        return run_chain(st, sweeps, burn_in, thin)

    if workers > 1 and chains > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(workers) as pool:
            return list(pool.map(one, range(chains)))
    return [one(i) for i in range(chains)]


def gelman_rubin(series: list[np.ndarray]) -> float:
    """Potential scale reduction factor R-hat over equal-length chains."""
    m = len(series)
    L = min(len(s) for s in series)
    if m < 2 or L < 2:
        return float("nan")
    x = np.array([np.asarray(s[:L], dtype=float) for s in series])
    means = x.mean(axis=1)
    W = x.var(axis=1, ddof=1).mean()
    B = L * means.var(ddof=1)
    if W == 0:
        return 1.0 if B == 0 else float("inf")
    var_hat = (L - 1) / L * W + B / L
    return float(math.sqrt(var_hat / W))
