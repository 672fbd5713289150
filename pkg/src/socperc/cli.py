"""Command line entry point: ``socperc <command> ...``."""
from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .experiments import (
    ConfigError,
    concentration_study,
    default_workers,
    make_config,
    qn_fixed_point,
    speed_study,
    tail_decay_check,
    write_table,
)
from .lattice import build_box
from .percolation import FunctionalKind, analyze, loads_configuration

FUNCTIONALS = ["cmax", "boundary", "bnb", "bnb-diam"]


def _emit(rows, out, args, seed, config=None):
    if out:
        write_table(rows, out, config=config or _args_dict(args), seed=seed, command=" ".join(sys.argv[1:]))
        print(f"wrote {len(rows)} rows to {out}", file=sys.stderr)
        return
    if not rows:
        return
    w = csv.DictWriter(sys.stdout, fieldnames=list(rows[0].keys()), lineterminator="\n")
    w.writeheader()
    w.writerows(rows)


def _args_dict(args) -> dict:
    return {k: v for k, v in vars(args).items() if k != "func"}


def _box_args(p, functional=True):
    p.add_argument("--dim", type=int, default=2)
    p.add_argument("--side", type=int, required=True)
    if functional:
        p.add_argument("--functional", choices=FUNCTIONALS, default="cmax")
        p.add_argument("--a", type=float, required=True)
        p.add_argument("--b", type=float, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None, help="CSV path (a JSON manifest is written beside it)")


def cmd_sample(args):
    from .sampler import run_chains

    box = build_box(args.dim, args.side, args.torus)
    kind = FunctionalKind.parse(args.functional, args.b)
    res = run_chains(
        box, kind, args.a, args.chains, args.sweeps, args.burn_in, args.thin,
        seed=args.seed, start=args.start, workers=args.workers,
    )
    rows = [
        {"chain_id": i, "sweep": int(s), "F": int(F), "p_n": float(p)}
        for i, r in enumerate(res)
        for s, F, p in zip(r.sweep, r.F, r.p_n)
    ]
    _emit(rows, args.out, args, args.seed)


def cmd_couple(args):
    from .coupling import coupling_trajectory, detect_stopping, estimate_Zn

    box = build_box(args.dim, args.side)
    kind = FunctionalKind.parse(args.functional, args.b)
    if args.emit == "zn":
        est = estimate_Zn(box, args.a, kind, args.replicas, rng=args.seed)
        rows = [{
            "n": args.side, "functional": kind.name, "a": args.a, "replicas": args.replicas,
            "fixed_points": round(est.value * args.replicas), "Zn": est.value, "stderr": est.stderr,
        }]
    elif args.emit == "trajectory":
        rows = []
        for j in range(args.replicas):
            t = coupling_trajectory(box, args.a, kind, rng=args.seed, replica=j)
            rows += [{"replica": j, "b": int(b), "F": int(F), "fixed_point": t.fixed_point} for b, F in zip(t.b, t.F)]
    else:
        rows = []
        for j in range(args.replicas):
            s = detect_stopping(box, args.a, kind, rng=args.seed, replica=j)
            rows.append({
                "replica": j, "B": s.B, "S": s.S, "value_at_stop": s.value_at_stop,
                "B2": s.B2, "S2": s.S2, "value_at_stop2": s.value_at_stop2,
            })
    _emit(rows, args.out, args, args.seed)


def cmd_enumerate(args):
    from .oracle import enumerate_measure

    box = build_box(args.dim, args.side)
    kind = FunctionalKind.parse(args.functional, args.b)
    ex = enumerate_measure(box, kind, args.a, keep_weights=False, allow_large=args.allow_large)
    rows = [{"F_value": F, "p_value": float(np.exp(-F / args.side**args.a)), "mu_probability": w} for F, w in ex.law_of_F.items()]
    print(f"Z_n = {ex.Zn!r}", file=sys.stderr)
    _emit(rows, args.out, args, None)


def cmd_carve_check(args):
    from .separator import LatticeSubgraph, carve

    text = Path(args.dump).read_text() if args.dump != "-" else sys.stdin.read()
    box, config = loads_configuration(text)
    an = analyze(box, config)
    if args.root is None:
        c = int(np.argmax(an.cluster_sizes))
        root = int(np.flatnonzero(an.label == c)[0])
    else:
        root = args.root
    vs = an.cluster_of(root)
    lab = an.label[root]
    inside = config.bits & (an.label[box.edges[:, 0]] == lab)
    loc = np.searchsorted(vs, box.edges[inside])
    g = LatticeSubgraph(box.coords[vs].astype(np.int64), loc)
    x = int(np.searchsorted(vs, root))
    m = args.m if args.m is not None else int(np.random.default_rng(args.seed).integers(1, g.num_vertices + 1))
    cut = carve(g, x, m, debug=args.debug)
    labels, sizes = g.components(cut)
    print(f"|V| = {g.num_vertices}")
    print(f"m = {m}")
    print(f"|E_0| = {len(cut)}")
    print(f"component size = {int(sizes[labels[x]])}")
    return 0 if sizes[labels[x]] == m else 1


def _study_config(args):
    keys = ["d", "n_list", "kind", "a", "b", "c", "beta", "gamma", "chains", "sweeps", "burn_in", "thin", "seed",
            "p_ref", "epsilon_list", "start", "workers", "output"]
    over = {k: getattr(args, k, None) for k in keys}
    if getattr(args, "torus", False):
        over["torus"] = True
    return make_config(args.config, **over)


def cmd_study(args):
    try:
        if args.study in ("concentration", "speed"):
            cfg = _study_config(args)
            res = concentration_study(cfg) if args.study == "concentration" else speed_study(cfg)
            out = cfg.output
            _emit(res.rows, out, args, cfg.seed, cfg.to_dict())
            if out:
                p = Path(out)
                write_table(res.chain_rows, p.with_name(p.stem + "_chains.csv"), cfg.to_dict(), cfg.seed)
        elif args.study == "qn":
            cfg = _study_config(args)
            rows = []
            for n in cfg.n_list:
                box = build_box(cfg.d, n)
                fp = qn_fixed_point(box, cfg.a, cfg.b, args.mc_samples, args.tol, rng=cfg.seed, exact=args.exact,
                                    diameter=cfg.kind == "bnb-diam")
                rows.append({"n": n, "a": cfg.a, "b": cfg.b, "q_n": fp.q, "mean_F": fp.mean_F,
                             "iterations": fp.iterations, "mc_samples": fp.mc_samples})
            _emit(rows, cfg.output, args, cfg.seed, cfg.to_dict())
        else:
            cfg = _study_config(args)
            kind = FunctionalKind.parse(cfg.kind, cfg.b)
            check = tail_decay_check(cfg.d, kind, args.p, cfg.a, args.A, cfg.n_list, args.samples, rng=cfg.seed,
                                     p_ref=cfg.p_ref)
            _emit(check.rows, cfg.output, args, cfg.seed, cfg.to_dict())
            print(f"strictly decreasing: {check.decreasing}", file=sys.stderr)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="socperc", description=__doc__)
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sample", help="Metropolis chains targeting mu_n; CSV chain_id,sweep,F,p_n")
    _box_args(p)
    p.add_argument("--torus", action="store_true")
    p.add_argument("--sweeps", type=int, default=1000)
    p.add_argument("--burn-in", type=int, default=100)
    p.add_argument("--thin", type=int, default=1)
    p.add_argument("--chains", type=int, default=1)
    p.add_argument("--start", choices=["open", "closed", "random"], default="open")
    p.add_argument("--workers", type=int, default=default_workers())
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("couple", help="monotone coupling: Z_n estimate, trajectories or stopping times")
    _box_args(p)
    p.add_argument("--replicas", type=int, default=1000)
    p.add_argument("--emit", choices=["zn", "trajectory", "stopping"], default="zn")
    p.set_defaults(func=cmd_couple)

    p = sub.add_parser("enumerate", help="exact law of F under mu_n; CSV F_value,p_value,mu_probability")
    _box_args(p)
    p.add_argument("--allow-large", action="store_true", help="lift the 24-edge cap (slow)")
    p.set_defaults(func=cmd_enumerate)

    p = sub.add_parser("carve-check", help="carve a cluster read from a configuration dump")
    p.add_argument("dump", help="configuration dump file, or - for stdin")
    p.add_argument("--root", type=int, default=None, help="vertex id (default: smallest vertex of the largest cluster)")
    p.add_argument("--m", type=int, default=None, help="target size (default: uniform in 1..|V|)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--debug", action="store_true", help="assert the intermediate slice bounds")
    p.set_defaults(func=cmd_carve_check)

    p = sub.add_parser("study", help="experiment studies")
    ssub = p.add_subparsers(dest="study", required=True)
    for name in ("concentration", "speed", "qn", "tails"):
        s = ssub.add_parser(name)
        s.add_argument("--config", default=None, help="flat key = value file; flags override it")
        s.add_argument("--d", "--dim", dest="d", type=int)
        s.add_argument("--n-list", dest="n_list")
        s.add_argument("--kind", "--functional", dest="kind", choices=FUNCTIONALS)
        s.add_argument("--a", type=float)
        s.add_argument("--b", type=float)
        s.add_argument("--seed", type=int)
        s.add_argument("--p-ref", dest="p_ref", type=float)
        s.add_argument("--out", "--output", dest="output")
        if name in ("concentration", "speed"):
            s.add_argument("--chains", type=int)
            s.add_argument("--sweeps", type=int)
            s.add_argument("--burn-in", dest="burn_in", type=int)
            s.add_argument("--thin", type=int)
            s.add_argument("--start", choices=["open", "closed", "random"])
            s.add_argument("--workers", type=int)
            s.add_argument("--epsilon-list", dest="epsilon_list")
            s.add_argument("--torus", action="store_true")
        if name == "speed":
            s.add_argument("--c", type=float)
            s.add_argument("--beta", type=float)
            s.add_argument("--gamma", type=float)
        if name == "qn":
            s.add_argument("--mc-samples", type=int, default=2000)
            s.add_argument("--tol", type=float, default=1e-4)
            s.add_argument("--exact", action="store_true")
        if name == "tails":
            s.add_argument("--p", type=float, required=True)
            s.add_argument("--A", type=float, default=1.0)
            s.add_argument("--samples", type=int, default=10_000)
        s.set_defaults(func=cmd_study)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args) or 0
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
