"""Exact computations on tiny boxes by enumerating all 2^r configurations.

Configuration index ``i`` has edge ``e`` open iff bit ``e`` of ``i`` is set.
Every enumeration goes through one table N[F, o], the number of
configurations with functional value F and o open edges, from which both
the measure mu_n and the P_p push-forward of F follow in closed form.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from functools import lru_cache

import numba as nb
import numpy as np

from .coupling import Estimate
from .lattice import BoxGeometry
from .percolation import (
    FunctionalKind,
    _KindParams,
    check_kind,
    functional_from_bits,
    log_weight_counts,
    phi_n,
)

MAX_ENUM_EDGES = 24


@nb.njit(cache=True, nogil=True)
def _enumerate(code, edges, lo, hi, boundary_mask, threshold, coords, n, offsets, table, F_out, o_out):
    r = edges.shape[0]
    bits = np.empty(r, dtype=np.bool_)
    for idx in range(lo, hi):
        o = 0
        for e in range(r):
            bit = (idx >> e) & 1
            bits[e] = bit == 1
            o += bit
        F = functional_from_bits(code, edges, bits, boundary_mask, threshold, coords, n, offsets)
        table[F, o] += 1
        if F_out.shape[0] > 0:
            F_out[idx] = F
            o_out[idx] = o


def _check_cap(box: BoxGeometry, allow_large: bool):
    r = box.num_edges
    if r > MAX_ENUM_EDGES:
        if not allow_large:
            raise ValueError(f"exact enumeration needs r <= {MAX_ENUM_EDGES} edges, box has {r}")
        warnings.warn(f"enumerating 2^{r} configurations", RuntimeWarning, stacklevel=3)


def _run(box, kind, keep_configs, chunk=1 << 20):
    check_kind(kind, box)
    params = _KindParams(kind, box)
    r = box.num_edges
    total = 1 << r
    table = np.zeros((box.num_vertices + 1, r + 1), dtype=np.int64)
    F_out = np.empty(total if keep_configs else 0, dtype=np.int32)
    o_out = np.empty(total if keep_configs else 0, dtype=np.int16)
    edges = np.ascontiguousarray(box.edges, dtype=np.int64)
    # disjoint index ranges with independent tallies, merged by addition
    for lo in range(0, total, chunk):
        part = np.zeros_like(table)
        _enumerate(
            params.code, edges, lo, min(lo + chunk, total), box.boundary_mask, params.threshold,
            box.coords, box.n, params.offsets, part, F_out, o_out,
        )
        table += part
    return table, F_out, o_out


@lru_cache(maxsize=32)
def _count_table(box: BoxGeometry, kind: FunctionalKind) -> np.ndarray:
    table, _, _ = _run(box, kind, False)
    table.setflags(write=False)
    return table


def count_table(box: BoxGeometry, kind: FunctionalKind, allow_large: bool = False) -> np.ndarray:
    """N[F, o] over all 2^r configurations (cached, read-only)."""
    _check_cap(box, allow_large)
    return _count_table(box, kind)


def _log_weights_grid(F_values, o_values, r, n, a):
    """log P_{phi_n(F)}(omega) for arrays of (F, o), with the zero-weight convention."""
    F_values = np.asarray(F_values, dtype=float)
    o_values = np.asarray(o_values, dtype=float)
    log_p = -F_values / float(n) ** a
    closed = r - o_values
    with np.errstate(divide="ignore", invalid="ignore"):
        log_q = np.where(F_values > 0, np.log(-np.expm1(log_p)), -np.inf)
        out = o_values * log_p + np.where(closed > 0, closed * log_q, 0.0)
    return out


@dataclass(frozen=True)
class ExactMeasure:
    """Exact mu_n on one box.

    ``law_of_F`` maps functional values to their mu_n probability and
    ``law_of_p`` the corresponding feedback parameters phi_n(F).
    ``per_config_weights[i]`` is P_{p_n(omega_i)}(omega_i) for configuration index i.
    """

    Zn: float
    Zn_grouped: float
    law_of_F: dict
    law_of_p: dict
    table: np.ndarray = field(repr=False)
    per_config_weights: np.ndarray | None = field(default=None, repr=False)

    def mean_p(self) -> float:
        return math.fsum(p * w for p, w in self.law_of_p.items())

    def prob_F(self, values) -> np.ndarray:
        return np.array([self.law_of_F.get(int(v), 0.0) for v in values])


def enumerate_measure(
    box: BoxGeometry, kind: FunctionalKind, a: float, keep_weights: bool | None = None, allow_large: bool = False
) -> ExactMeasure:
    """Partition function and exact laws of F_n and p_n under mu_n."""
    _check_cap(box, allow_large)
    r = box.num_edges
    if keep_weights is None:
        keep_weights = r <= 20
    table, F_cfg, o_cfg = _run(box, kind, True)

    # direct route: every configuration's own weight, summed exactly
    w_cfg = np.exp(_log_weights_grid(F_cfg, o_cfg, r, box.n, a))
    Zn = math.fsum(np.sort(w_cfg))

    # grouped route: sum_b P_{phi(b)}(F = b) from the count table
    Fs, os_ = np.nonzero(table)
    terms = table[Fs, os_] * np.exp(_log_weights_grid(Fs, os_, r, box.n, a))
    by_F = {}
    for F, t in zip(Fs.tolist(), terms.tolist()):
        by_F.setdefault(F, []).append(t)
    mass = {F: math.fsum(sorted(ts)) for F, ts in by_F.items()}
    Zg = math.fsum(sorted(mass.values()))
    if not math.isclose(Zn, Zg, rel_tol=1e-12):
        raise ArithmeticError(f"partition function mismatch: {Zn!r} vs {Zg!r}")

    law_F = {F: m / Zn for F, m in sorted(mass.items()) if m > 0}
    law_p = {phi_n(F, box.n, a): pr for F, pr in law_F.items()}
    return ExactMeasure(Zn, Zg, law_F, law_p, table, w_cfg if keep_weights else None)


def exact_Pp_pushforward(box: BoxGeometry, kind: FunctionalKind, p: float, allow_large: bool = False) -> dict:
    """Exact law {F: P_p(F_n = F)} under the Bernoulli(p) product measure."""
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"p must lie in [0, 1], got {p}")
    table = count_table(box, kind, allow_large)
    r = box.num_edges
    out = {}
    for F in range(table.shape[0]):
        terms = [
            table[F, o] * math.exp(log_weight_counts(o, r, p))
            for o in range(r + 1)
            if table[F, o] and log_weight_counts(o, r, p) > -math.inf
        ]
        total = math.fsum(terms)
        if total > 0:
            out[F] = total
    return out


def exact_mean_F(box: BoxGeometry, kind: FunctionalKind, p: float) -> float:
    law = exact_Pp_pushforward(box, kind, p)
    return math.fsum(F * w for F, w in law.items())


def importance_Zn(
    box: BoxGeometry, kind: FunctionalKind, a: float, q: float, samples: int, rng=0, batch: int = 4096
) -> Estimate:
    """Z_n = E_q[ P_{p_n(omega)}(omega) / P_q(omega) ] estimated from Bernoulli(q) samples.

    Ratios are formed in log space; zero-weight samples contribute exactly 0.
    """
    if not 0.0 < q < 1.0:
        raise ValueError(f"proposal q must lie in (0, 1), got {q}")
    if samples < 1:
        raise ValueError("samples must be >= 1")
    check_kind(kind, box)
    params = _KindParams(kind, box)
    gen = np.random.default_rng(rng)
    r = box.num_edges
    edges = np.ascontiguousarray(box.edges, dtype=np.int64)
    log_ratio = np.empty(samples)
    done = 0
    while done < samples:
        m = min(batch, samples - done)
        bits = gen.random((m, r)) < q
        Fs = _batch_F(params.code, edges, bits, box.boundary_mask, params.threshold, box.coords, box.n, params.offsets)
        o = bits.sum(axis=1)
        log_prop = o * math.log(q) + (r - o) * math.log1p(-q)
        log_ratio[done : done + m] = _log_weights_grid(Fs, o, r, box.n, a) - log_prop
        done += m
    shift = np.max(log_ratio)
    if shift == -np.inf:
        return Estimate(0.0, 0.0, samples)
    scaled = np.exp(log_ratio - shift)
    mean = scaled.mean()
    sd = scaled.std(ddof=1) if samples > 1 else 0.0
    scale = math.exp(shift)
    return Estimate(mean * scale, sd * scale / math.sqrt(samples), samples)


@nb.njit(cache=True, nogil=True)
def _batch_F(code, edges, bits, boundary_mask, threshold, coords, n, offsets):
    out = np.empty(bits.shape[0], dtype=np.int64)
    for i in range(bits.shape[0]):
        out[i] = functional_from_bits(code, edges, bits[i], boundary_mask, threshold, coords, n, offsets)
    return out


def config_from_index(box: BoxGeometry, index: int):
    from .percolation import Configuration

    bits = ((int(index) >> np.arange(box.num_edges)) & 1).astype(bool)
    return Configuration(bits)


def index_of_config(config) -> int:
    return int(sum(1 << int(e) for e in np.flatnonzero(config.bits)))
