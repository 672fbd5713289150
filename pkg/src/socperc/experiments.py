"""Experiment harness: concentration and speed studies, the q_n fixed point, tail checks.

Output tables are lists of flat dicts; :func:`write_table` writes them as CSV
together with a JSON manifest (config echo, seed, package version) beside it.

CSV schemas
-----------
concentration   n, samples, mean_p, sd_p, q05, q25, q50, q75, q95, spread, rhat, sweeps, tail_<eps>...
chains          n, chain_id, mean_p, mean_F, samples
speed           n, c, samples, q05, q25, q50, q75, q95, median_abs
qn              n, a, b, q_n, mean_F, iterations, mc_samples
tails           n, p, a, A, threshold, side, estimate, stderr, samples
sample          chain_id, sweep, F, p_n
couple/zn       n, functional, a, replicas, fixed_points, Zn, stderr
couple/trajectory   replica, b, F, fixed_point
couple/stopping     replica, B, S, value_at_stop, B2, S2, value_at_stop2
enumerate       F_value, p_value, mu_probability
"""
from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import __version__
from .lattice import build_box
from .oracle import _batch_F, exact_mean_F
from .percolation import BNB, BNB_DIAM, BOUNDARY, CMAX, FunctionalKind, _KindParams, check_kind, phi_n
from .sampler import gelman_rubin, run_chains

WORKERS_ENV = "SOCPERC_WORKERS"
DEFAULT_EPSILONS = (0.20, 0.10, 0.05, 0.02)


def default_workers() -> int:
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        return 1


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    d: int = 2
    n_list: tuple = (16, 32, 64)
    kind: str = "cmax"
    a: float = 1.5
    b: float | None = None
    c: float | None = None
    beta: float | None = None
    gamma: float | None = None
    chains: int = 4
    sweeps: int = 2000
    burn_in: int = 500
    thin: int = 1
    seed: int = 0
    p_ref: float | None = None
    epsilon_list: tuple = DEFAULT_EPSILONS
    torus: bool = False
    start: str = "open"
    workers: int = field(default_factory=default_workers)
    output: str | None = None

    def __post_init__(self):
        self.n_list = tuple(int(x) for x in self.n_list)
        self.epsilon_list = tuple(float(x) for x in self.epsilon_list)
        if self.p_ref is None:
            if self.d != 2:
                raise ConfigError("p_ref has no default outside d = 2; supply a literature value")
            self.p_ref = 0.5

    @property
    def functional(self) -> FunctionalKind:
        return FunctionalKind.parse(self.kind, self.b)

    def validate(self) -> "ExperimentConfig":
        """Check the parameter window in which concentration at p_c is proven."""
        d, a = self.d, self.a
        try:
            kind = self.functional
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if not self.n_list:
            raise ConfigError("n_list is empty")
        if self.torus and kind.code != CMAX:
            raise ConfigError("the torus variant is defined for the cmax functional only")
        if kind.code == CMAX and not 0 < a < d:
            raise ConfigError(f"cmax needs 0 < a < d, got a={a}, d={d}")
        if kind.code == BOUNDARY and not d - 1 < a < d:
            raise ConfigError(f"boundary needs d-1 < a < d, got a={a}, d={d}")
        if kind.code in (BNB, BNB_DIAM):
            if not 5 * d / 6 < a < d:
                raise ConfigError(f"bnb needs 5d/6 < a < d, got a={a}, d={d}")
            hi = 2 * a / d - 5 / 3
            if not 0 < self.b < hi:
                raise ConfigError(f"bnb needs 0 < b < 2a/d - 5/3 = {hi:.6g}, got b={self.b}")
        if self.chains < 1 or self.thin < 1 or not self.sweeps > self.burn_in >= 0:
            raise ConfigError("need chains >= 1, thin >= 1 and sweeps > burn_in >= 0")
        if not 0 < self.p_ref < 1:
            raise ConfigError("p_ref must lie in (0, 1)")
        return self

    def validate_speed(self) -> "ExperimentConfig":
        """Window for the speed exponent c under exponent hypotheses beta', gamma'."""
        self.validate()
        if self.functional.code not in (BNB, BNB_DIAM):
            raise ConfigError("the speed study is defined for the bnb functional")
        if self.c is None or self.beta is None or self.gamma is None:
            raise ConfigError("speed study needs c, beta and gamma")
        if self.beta <= 0 or self.gamma <= 0:
            raise ConfigError("beta and gamma must be positive")
        bound = min(self.b / (2 * self.gamma), (1 - self.b) / self.beta, (self.d - self.a) / self.beta)
        if not 0 <= self.c < bound:
            raise ConfigError(f"need 0 <= c < min(b/(2 gamma), (1-b)/beta, (d-a)/beta) = {bound:.6g}, got c={self.c}")
        return self

    def to_dict(self) -> dict:
        out = asdict(self)
        out["n_list"] = list(self.n_list)
        out["epsilon_list"] = list(self.epsilon_list)
        return out


_LIST_KEYS = {"n_list", "epsilon_list"}


def _coerce(name: str, raw):
    kinds = {f.name: f.type for f in fields(ExperimentConfig)}
    if name not in kinds:
        raise ConfigError(f"unknown config key {name!r}")
    if raw is None:
        return None
    if name in _LIST_KEYS:
        items = raw if isinstance(raw, (list, tuple)) else [x for x in str(raw).replace(",", " ").split()]
        return tuple((int if name == "n_list" else float)(x) for x in items)
    t = kinds[name]
    if isinstance(raw, str) and raw.lower() in ("none", ""):
        return None
    if "bool" in t:
        return raw if isinstance(raw, bool) else str(raw).lower() in ("1", "true", "yes", "on")
    if t.startswith("int"):
        return int(raw)
    if t.startswith("float"):
        return float(raw)
    return str(raw)


def parse_config_text(text: str) -> dict:
    """Flat ``key = value`` lines; ``#`` starts a comment; lists are comma separated."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = _coerce(key.replace("-", "_"), value)
    return out


def make_config(path: str | None = None, **overrides) -> ExperimentConfig:
    """Config from an optional file, with keyword overrides (``None`` values are ignored)."""
    values = parse_config_text(Path(path).read_text()) if path else {}
    for k, v in overrides.items():
        if v is not None:
            values[k] = _coerce(k, v)
    return ExperimentConfig(**values)


# --------------------------------------------------------------------------- #
# output


def write_table(rows: list[dict], path, config: dict | None = None, seed=None, command: str | None = None) -> Path:
    """Write rows as CSV and a ``<name>.json`` manifest next to it."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    columns = list(rows[0].keys()) if rows else []
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=columns, lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: _fmt(v) for k, v in row.items()})
    manifest = {"version": __version__, "seed": seed, "command": command, "config": config or {}, "rows": len(rows)}
    path.with_suffix(".json").write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n")
    return path


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return int(v)
    return v


# --------------------------------------------------------------------------- #
# studies

QUANTILES = (0.05, 0.25, 0.5, 0.75, 0.95)


def _eps_key(eps: float) -> str:
    return f"tail_{eps:g}"


@dataclass
class StudyResult:
    rows: list
    chain_rows: list


def _run_n(cfg: ExperimentConfig, n: int, sweeps: int, seed):
    box = build_box(cfg.d, n, cfg.torus)
    return run_chains(
        box, cfg.functional, cfg.a, cfg.chains, sweeps, cfg.burn_in, cfg.thin,
        seed=seed, start=cfg.start, workers=cfg.workers,
    )


def _seed_for(cfg: ExperimentConfig, n: int, attempt: int = 0):
    return np.random.SeedSequence([cfg.seed, n, attempt])


def concentration_study(cfg: ExperimentConfig, max_spread: float | None = 0.02, max_doublings: int = 1) -> StudyResult:
    """Law of p_n under mu_n for each n, pooled over chains after burn-in.

    If the between-chain spread of mean p_n exceeds ``max_spread``, that n is
    re-run with doubled sweeps (at most ``max_doublings`` times).
    """
    cfg.validate()
    rows, chain_rows = [], []
    for n in cfg.n_list:
        sweeps = cfg.sweeps
        for attempt in range(max_doublings + 1):
            samples = _run_n(replace(cfg, sweeps=sweeps, burn_in=cfg.burn_in), n, sweeps, _seed_for(cfg, n, attempt))
            means = np.array([s.p_n.mean() for s in samples])
            spread = float(means.max() - means.min())
            if max_spread is None or spread <= max_spread or attempt == max_doublings:
                break
            sweeps *= 2
        p = np.concatenate([s.p_n for s in samples])
        row = {"n": n, "samples": int(p.size), "mean_p": float(p.mean()), "sd_p": float(p.std())}
        for q, v in zip(QUANTILES, np.quantile(p, QUANTILES)):
            row[f"q{round(q * 100):02d}"] = float(v)
        row["spread"] = spread
        row["rhat"] = gelman_rubin([s.p_n for s in samples])
        row["sweeps"] = sweeps
        for eps in cfg.epsilon_list:
            row[_eps_key(eps)] = float(np.mean(np.abs(p - cfg.p_ref) >= eps))
        rows.append(row)
        for i, s in enumerate(samples):
            chain_rows.append(
                {"n": n, "chain_id": i, "mean_p": float(s.p_n.mean()), "mean_F": float(s.F.mean()), "samples": len(s)}
            )
    return StudyResult(rows, chain_rows)


def speed_study(cfg: ExperimentConfig) -> StudyResult:
    """Quantiles of n^c (p_n - p_ref) for each n."""
    cfg.validate_speed()
    rows, chain_rows = [], []
    for n in cfg.n_list:
        samples = _run_n(cfg, n, cfg.sweeps, _seed_for(cfg, n))
        p = np.concatenate([s.p_n for s in samples])
        x = n**cfg.c * (p - cfg.p_ref)
        row = {"n": n, "c": cfg.c, "samples": int(x.size)}
        for q, v in zip(QUANTILES, np.quantile(x, QUANTILES)):
            row[f"q{round(q * 100):02d}"] = float(v)
        row["median_abs"] = float(np.median(np.abs(x)))
        rows.append(row)
        for i, s in enumerate(samples):
            chain_rows.append(
                {"n": n, "chain_id": i, "mean_p": float(s.p_n.mean()), "mean_F": float(s.F.mean()), "samples": len(s)}
            )
    return StudyResult(rows, chain_rows)


def non_increasing(values, strict: bool = False) -> bool:
    v = list(values)
    if strict:
        return all(x > y for x, y in zip(v, v[1:]))
    return all(x >= y for x, y in zip(v, v[1:]))


# --------------------------------------------------------------------------- #
# q_n


@dataclass(frozen=True)
class FixedPoint:
    q: float
    mean_F: float
    iterations: int
    mc_samples: int
    bracket: tuple


class BracketError(RuntimeError):
    pass


def qn_fixed_point(
    box, a: float, b: float, mc_samples: int = 2000, tol: float = 1e-4, rng=0,
    exact: bool = False, diameter: bool = False, max_retries: int = 4, check_window: bool = True,
) -> FixedPoint:
    """Fixed point q of f(p) = phi_n(E_p[B_n^b]) by bisection on g(p) = f(p) - p.

    The Monte Carlo mean uses common random numbers across p (one uniform per
    edge and sample, thresholded at p), so the estimate of E_p[B] is monotone
    in p; monotonicity is still checked and a violation doubles the sample
    size. ``exact=True`` uses the enumeration oracle instead.
    """
    kind = FunctionalKind.bnb_diam(b) if diameter else FunctionalKind.bnb(b)
    check_kind(kind, box)
    if check_window:
        ExperimentConfig(d=box.d, n_list=(box.n,), kind=kind.name, a=a, b=b).validate()
    if tol <= 0:
        raise ValueError("tol must be positive")

    if exact:
        def mean_B(p):
            return exact_mean_F(box, kind, p)
        return _bisect_fixed_point(box, a, mean_B, tol, 0)

    params = _KindParams(kind, box)
    edges = np.ascontiguousarray(box.edges, dtype=np.int64)
    gen = np.random.default_rng(rng)
    samples = int(mc_samples)
    for _ in range(max_retries + 1):
        U = gen.random((samples, box.num_edges))
        seen = {}

        def mean_B(p, U=U, seen=seen):
            F = _batch_F(params.code, edges, U < p, box.boundary_mask, params.threshold, box.coords, box.n, params.offsets)
            val = float(F.mean())
            seen[p] = val
            return val

        try:
            res = _bisect_fixed_point(box, a, mean_B, tol, samples)
        except BracketError:
            samples *= 2
            continue
        pts = sorted(seen.items())
        if all(x[1] <= y[1] for x, y in zip(pts, pts[1:])):
            return res
        samples *= 2
    raise BracketError("fixed point not bracketed after retries")


def _bisect_fixed_point(box, a, mean_B, tol, samples):
    lo, hi = 0.0, 1.0
    g_lo = phi_n(mean_B(lo), box.n, a) - lo
    g_hi = phi_n(mean_B(hi), box.n, a) - hi
    if not (g_lo > 0 and g_hi < 0):
        raise BracketError(f"g(0) = {g_lo}, g(1) = {g_hi}: no sign change")
    it = 0
    while hi - lo >= tol:
        mid = 0.5 * (lo + hi)
        g = phi_n(mean_B(mid), box.n, a) - mid
        if g > 0:
            lo = mid
        else:
            hi = mid
        it += 1
    q = 0.5 * (lo + hi)
    return FixedPoint(q, mean_B(q), it, samples, (lo, hi))


# --------------------------------------------------------------------------- #
# tails


@dataclass
class TailCheck:
    rows: list
    decreasing: bool


def tail_decay_check(
    d: int, kind: FunctionalKind, p: float, a: float, A: float, n_list, samples: int = 10_000,
    rng=0, p_ref: float = 0.5, batch: int = 2000, side: str | None = None,
) -> TailCheck:
    """Empirical tails under P_p: P(F > A n^a) below p_ref, P(F < A n^a) above it.

    ``side="upper"`` or ``"lower"`` overrides the choice made from p_ref.
    """
    if not 0 <= p <= 1:
        raise ValueError("p must lie in [0, 1]")
    if side not in (None, "upper", "lower"):
        raise ValueError(f"side must be 'upper' or 'lower', got {side!r}")
    upper = p < p_ref if side is None else side == "upper"
    rows = []
    for n in n_list:
        box = build_box(d, n)
        check_kind(kind, box)
        params = _KindParams(kind, box)
        edges = np.ascontiguousarray(box.edges, dtype=np.int64)
        gen = np.random.default_rng(np.random.SeedSequence([int(rng), n]))
        thr = A * n**a
        hits = 0
        done = 0
        while done < samples:
            m = min(batch, samples - done)
            bits = gen.random((m, box.num_edges)) < p
            F = _batch_F(params.code, edges, bits, box.boundary_mask, params.threshold, box.coords, box.n, params.offsets)
            hits += int(np.sum(F > thr) if upper else np.sum(F < thr))
            done += m
        est = hits / samples
        rows.append({
            "n": n, "p": p, "a": a, "A": A, "threshold": thr, "side": "upper" if upper else "lower",
            "estimate": est, "stderr": math.sqrt(est * (1 - est) / samples), "samples": samples,
        })
    return TailCheck(rows, non_increasing([r["estimate"] for r in rows], strict=True))
