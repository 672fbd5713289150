"""End-to-end acceptance criteria; each test prints one PASS/FAIL line.

Run alone with ``pytest -v -s tests/test_acceptance.py`` or as a script.
"""
import heapq
import math
import time

import numpy as np
import pytest
from scipy import stats

from socperc.coupling import CouplingState, advance_coupling, configuration_at, estimate_Zn, simulate_happy_event
from socperc.experiments import ExperimentConfig, concentration_study, non_increasing, tail_decay_check
from socperc.lattice import build_box
from socperc.oracle import enumerate_measure
from socperc.percolation import FunctionalKind, functional_value, log_weight, sample_bernoulli
from socperc.sampler import init_chain, recompute_modes_agree, run_chain, run_chains
from socperc.separator import LatticeSubgraph, bisect, butcher_bound, carve, carve_bound

CMAX = FunctionalKind.cmax()
BOUNDARY = FunctionalKind.boundary()
ALL_KINDS = [CMAX, BOUNDARY, FunctionalKind.bnb(0.5), FunctionalKind.bnb_diam(0.5)]


@pytest.fixture
def report(capsys):
    lines = []

    def emit(number, ok, detail):
        line = f"CRITERION {number} {'PASS' if ok else 'FAIL'}: {detail}"
        lines.append(line)
        with capsys.disabled():
            print("\n" + line)
        return ok

    return emit


def test_criterion_1_sampler_matches_oracle(report):
    box = build_box(2, 3)
    t0 = time.time()
    exact = enumerate_measure(box, CMAX, 1.5).law_of_F
    runs = run_chains(box, CMAX, 1.5, chains=4, sweeps=250_100, burn_in=100, thin=1, seed=101)
    F = np.concatenate([r.F for r in runs])
    emp = np.bincount(F, minlength=10) / F.size
    tv = 0.5 * sum(abs(emp[k] - exact.get(k, 0.0)) for k in range(10))
    ok = F.size == 10**6 and tv <= 0.02
    assert report(1, ok, f"TV = {tv:.5f} over {F.size} samples ({time.time() - t0:.1f} s)")


def test_criterion_2_coupling_Zn(report):
    t0 = time.time()
    parts = []
    ok = True
    for n, kind in [(2, CMAX), (3, CMAX), (3, BOUNDARY)]:
        box = build_box(2, n)
        exact = enumerate_measure(box, kind, 1.0).Zn
        est = estimate_Zn(box, 1.0, kind, 100_000, rng=202 + n)
        z = (est.value - exact) / est.stderr
        ok &= abs(z) <= 3
        parts.append(f"{kind.name} n={n}: {est.value:.5f} vs {exact:.5f} (z={z:+.2f})")
    assert report(2, ok, "; ".join(parts) + f" ({time.time() - t0:.1f} s)")


def random_site_cluster(rng, n=64, max_size=2000):
    """Connected vertex set in [0, n)^2 grown by invasion (fractal) or Eden (compact) growth."""
    size = int(math.exp(rng.uniform(0, math.log(max_size))))
    invasion = rng.random() < 0.5
    weight = rng.random((n, n))
    start = tuple(rng.integers(0, n, 2))
    inside = {start}
    heap, frontier = [], []
    seen = {start}

    def push(p):
        for dx, dy in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            q = (p[0] + dx, p[1] + dy)
            if 0 <= q[0] < n and 0 <= q[1] < n and q not in seen:
                seen.add(q)
                if invasion:
                    heapq.heappush(heap, (weight[q], q))
                else:
                    frontier.append(q)

    push(start)
    while len(inside) < size and (heap or frontier):
        if invasion:
            _, q = heapq.heappop(heap)
        else:
            i = int(rng.integers(len(frontier)))
            frontier[i], frontier[-1] = frontier[-1], frontier[i]
            q = frontier.pop()
        inside.add(q)
        push(q)
    return LatticeSubgraph.from_points(sorted(inside))


def test_criterion_3_separator(report):
    rng = np.random.default_rng(303)
    t0 = time.time()
    exact = bounded_carve = halved = bounded_bisect = 0
    worst = 0.0
    sizes = []
    for _ in range(1000):
        g = random_site_cluster(rng)
        V = g.num_vertices
        sizes.append(V)
        m = int(rng.integers(1, V + 1))
        x = int(rng.integers(V))
        cut = carve(g, x, m)
        labels, comp = g.components(cut)
        exact += comp[labels[x]] == m
        bounded_carve += len(cut) <= carve_bound(V, 2)
        worst = max(worst, len(cut) / carve_bound(V, 2))
        bcut = bisect(g)
        _, bcomp = g.components(bcut)
        halved += bcomp.max() <= math.ceil(V / 2)
        bounded_bisect += len(bcut) <= butcher_bound(V, 2)
    elapsed = time.time() - t0
    ok = exact == bounded_carve == halved == bounded_bisect == 1000 and elapsed < 60
    assert report(
        3, ok,
        f"exact {exact}/1000, carve bound {bounded_carve}/1000 (worst ratio {worst:.3f}), "
        f"bisect halves {halved}/1000 within bound {bounded_bisect}/1000, sizes {min(sizes)}-{max(sizes)} "
        f"({elapsed:.1f} s)",
    )


def test_criterion_4_concentration(report):
    t0 = time.time()
    cfg = ExperimentConfig(
        d=2, n_list=(16, 32, 64), kind="cmax", a=1.5, chains=4, sweeps=4000, burn_in=1000, seed=2024,
        p_ref=0.5, epsilon_list=(0.1,),
    )
    rows = concentration_study(cfg, max_spread=0.02, max_doublings=1).rows
    means = {r["n"]: r["mean_p"] for r in rows}
    tails = [r["tail_0.1"] for r in rows]
    ok = 0.40 <= means[16] <= 0.60 and 0.45 <= means[64] <= 0.55 and non_increasing(tails, strict=True)
    detail = ", ".join(
        f"n={r['n']}: mean {r['mean_p']:.4f} tail {r['tail_0.1']:.5f} spread {r['spread']:.4f} sweeps {r['sweeps']}"
        for r in rows
    )
    assert report(4, ok, f"{detail} ({time.time() - t0:.1f} s)")


def test_criterion_5_coupling_marginals(report):
    box = build_box(2, 8)
    a, r = 1.5, box.num_edges
    t0 = time.time()
    passed, parts = 0, []
    for b0 in (0, 10, 50):
        q = math.exp(-b0 / 8**a)
        counts = np.array([configuration_at(box, a, b0, seed=505, replica=j).open_count for j in range(10_000)])
        if q == 1.0:
            # degenerate Binomial(r, 1): the exact test is that every count equals r
            pval = 1.0 if np.all(counts == r) else 0.0
        else:
            pmf = stats.binom.pmf(np.arange(r + 1), r, q)
            obs, exp = [], []
            acc_o = acc_e = 0.0
            for k in range(r + 1):
                acc_o += np.sum(counts == k)
                acc_e += pmf[k] * counts.size
                if acc_e >= 5:
                    obs.append(acc_o)
                    exp.append(acc_e)
                    acc_o = acc_e = 0.0
            obs[-1] += acc_o
            exp[-1] += acc_e
            pval = stats.chisquare(obs, exp).pvalue
        passed += pval > 0.01
        parts.append(f"b0={b0}: p={pval:.3f}")
    assert report(5, passed >= 2, f"{passed}/3 pass ({'; '.join(parts)}) ({time.time() - t0:.1f} s)")


def test_criterion_6_happy_event(report):
    box = build_box(2, 5)
    t0 = time.time()
    occurred = checks = sandwiches = 0
    for j in range(10_000):
        res = simulate_happy_event(box, 1.5, rng=606, replica=j)
        occurred += res.occurred
        checks += res.check
        sandwiches += res.sandwich_holds
    ok = checks == sandwiches == 10_000
    assert report(
        6, ok,
        f"implication {checks}/10000, sandwich {sandwiches}/10000, event occurred {occurred} times "
        f"({time.time() - t0:.1f} s)",
    )


def test_criterion_7_modes_agree(report):
    box = build_box(2, 16)
    t0 = time.time()
    results = {}
    for kind in ALL_KINDS:
        st = init_chain(box, kind, 1.5, seed=707)
        run_chain(st, 50, burn_in=20)
        results[kind.name] = recompute_modes_agree(st, 100_000)
    assert report(7, all(results.values()), f"{results} ({time.time() - t0:.1f} s)")


def test_criterion_8_monotonicity(report):
    rng = np.random.default_rng(808)
    t0 = time.time()
    # single-edge openings never lower F
    bad_F = 0
    for i in range(10_000):
        kind = ALL_KINDS[i % 4]
        box = build_box(2, int(rng.integers(2, 13)))
        c = sample_bernoulli(box, rng.random(), rng)
        closed = np.flatnonzero(~c.bits)
        if closed.size == 0:
            c = c.closed([int(rng.integers(box.num_edges))])
            closed = np.flatnonzero(~c.bits)
        up = c.opened([int(rng.choice(closed))])
        bad_F += functional_value(kind, box, up) < functional_value(kind, box, c)
    # coupling bits never increase along a trajectory
    bad_bits = 0
    steps = 0
    for j in range(20):
        box = build_box(2, int(rng.integers(3, 7)))
        st = CouplingState(box, 1.5, seed=808, replica=j)
        prev = st.bits.copy()
        for _ in range(min(8, box.num_vertices) * (box.num_edges + 1)):
            advance_coupling(st)
            bad_bits += int(np.any(st.bits > prev))
            prev = st.bits.copy()
            steps += 1
    # weight comparison: P_p(w) >= P_q(w) exp(-2 d n^d rad / eta) for eta < q < 1 - eta, |p - q| < rad < eta / 2
    bad_w = 0
    for _ in range(1000):
        n = int(rng.integers(2, 9))
        box = build_box(2, n)
        eta = rng.uniform(0.01, 0.49)
        q = rng.uniform(eta, 1 - eta)
        rad = rng.uniform(0, eta / 2)
        p = q + rng.uniform(-1, 1) * rad
        w = sample_bernoulli(box, rng.random(), rng)
        bound = log_weight(box, w, q) - 2 * box.d * n**box.d * rad / eta
        bad_w += log_weight(box, w, p) < bound - 1e-12
    ok = bad_F == bad_bits == bad_w == 0
    assert report(
        8, ok,
        f"F decreased {bad_F}/10000, bits increased {bad_bits}/{steps} steps, weight bound violated {bad_w}/1000 "
        f"({time.time() - t0:.1f} s)",
    )


def test_criterion_9_tail_decay(report):
    t0 = time.time()
    # subcritical: P(|C_max| > 2 n); supercritical: P(|C_max| < n^1.95)
    low = tail_decay_check(2, CMAX, 0.3, 1.0, 2.0, [8, 16, 32], samples=10_000, rng=909)
    high = tail_decay_check(2, CMAX, 0.7, 1.95, 1.0, [8, 16, 32], samples=10_000, rng=910)
    fmt = lambda t: ", ".join(f"{r['estimate']:.4f}" for r in t.rows)
    ok = low.decreasing and high.decreasing
    assert report(
        9, ok,
        f"p=0.3 upper tail [{fmt(low)}] decreasing={low.decreasing}; "
        f"p=0.7 lower tail [{fmt(high)}] decreasing={high.decreasing} ({time.time() - t0:.1f} s)",
    )


if __name__ == "__main__":
    import sys

    sys.exit(pytest.main(["-v", "-s", __file__]))
