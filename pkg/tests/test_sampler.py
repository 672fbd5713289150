import math

import numpy as np
import pytest

from socperc.lattice import build_box
from socperc.oracle import enumerate_measure, index_of_config
from socperc.percolation import Configuration, FunctionalKind, log_weight, feedback_p
from socperc.sampler import (
    INCREMENTAL,
    REFERENCE,
    ChainState,
    gelman_rubin,
    init_chain,
    mh_step,
    recompute_modes_agree,
    run_chain,
    run_chains,
)

CMAX = FunctionalKind.cmax()
BOUNDARY = FunctionalKind.boundary()
BNB = FunctionalKind.bnb(0.5)
KINDS = [CMAX, BOUNDARY, BNB, FunctionalKind.bnb_diam(0.5)]


def force(state, edge, u):
    """Make the next proposal flip ``edge`` with uniform ``u``."""
    state._props = np.array([edge], dtype=np.int64)
    state._us = np.array([u])
    state._pos = 0


def test_init_examples(box3):
    st = init_chain(box3, CMAX, 1.5)
    assert st.F == 9 and st.p_n == pytest.approx(math.exp(-9 / 3**1.5))
    assert st.log_w == pytest.approx(12 * (-9 / 3**1.5))
    assert init_chain(box3, BOUNDARY, 1.0).F == 9
    assert init_chain(box3, BNB, 1.0).F == 9
    assert init_chain(box3, CMAX, 1.0, start="closed").F == 1
    with pytest.raises(ValueError):
        init_chain(box3, BNB, 1.0, start="closed")
    with pytest.raises(ValueError):
        init_chain(box3, CMAX, 1.0, start="sideways")


def test_zero_weight_proposal_rejected(box2):
    # BNB(0.5) on Lambda(2): threshold 2; one open edge gives F = 2, closing it gives F = 0, p = 1
    bits = np.zeros(4, dtype=bool)
    bits[0] = True
    st = ChainState(box2, BNB, 1.0, bits)
    force(st, 0, 0.0)
    st, acc = mh_step(st)
    assert not acc and st.bits[0] and st.coherent()


def test_equal_weight_accepted(box3):
    # choose a so that p_n = 1/2 at F = 9; closing one edge of the all-open box keeps
    # M_n = 9, so the proposal has the same weight and any u < 1 accepts it
    a = math.log(9 / math.log(2)) / math.log(3)
    st = init_chain(box3, BOUNDARY, a)
    assert st.p_n == pytest.approx(0.5, rel=1e-14)
    force(st, 0, 1 - 1e-9)
    st, acc = mh_step(st)
    assert acc and not st.bits[0] and st.F == 9


def test_acceptance_ratio_matches_oracle(box2):
    ex = enumerate_measure(box2, CMAX, 1.0)
    w = ex.per_config_weights
    rng = np.random.default_rng(1)
    for _ in range(40):
        bits = rng.random(4) < 0.5
        c = Configuration(bits)
        i = index_of_config(c)
        e = int(rng.integers(4))
        j = i ^ (1 << e)
        ratio = w[j] / w[i]
        for u, expect in ((ratio * (1 - 1e-9), True), (min(ratio * (1 + 1e-9), 1 - 1e-15), ratio >= 1)):
            st = ChainState(box2, CMAX, 1.0, bits)
            assert st.log_w == pytest.approx(math.log(w[i]), rel=1e-12)
            force(st, e, u)
            _, acc = mh_step(st)
            assert acc == expect


def test_log_w_matches_direct(box3):
    st = init_chain(box3, CMAX, 1.3, seed=2)
    for _ in range(300):
        mh_step(st)
        c = st.config
        assert st.log_w == pytest.approx(log_weight(box3, c, feedback_p(CMAX, box3, c, 1.3)), rel=1e-12)


@pytest.mark.parametrize("kind", KINDS)
def test_coherent_after_steps(kind):
    box = build_box(2, 6)
    st = init_chain(box, kind, 1.2, seed=3)
    for _ in range(200):
        mh_step(st)
        assert st.coherent()


@pytest.mark.parametrize("kind", KINDS)
def test_modes_agree_large(kind):
    box = build_box(2, 16)
    st = init_chain(box, kind, 1.5, seed=4)
    run_chain(st, 20, burn_in=10)
    assert recompute_modes_agree(st, 100_000)


def test_modes_agree_zero_and_torus():
    assert recompute_modes_agree(init_chain(build_box(2, 4), CMAX, 1.0), 0)
    torus = build_box(2, 8, torus=True)
    assert recompute_modes_agree(init_chain(torus, CMAX, 1.0, seed=1), 20_000)
    assert recompute_modes_agree(init_chain(build_box(3, 4), BOUNDARY, 2.0, seed=1), 20_000)


def test_reference_mode_same_trajectory():
    box = build_box(2, 6)
    a = init_chain(box, BNB, 1.4, seed=9, mode=INCREMENTAL)
    b = init_chain(box, BNB, 1.4, seed=9, mode=REFERENCE)
    ra, rb = run_chain(a, 30, 5, 1), run_chain(b, 30, 5, 1)
    assert np.array_equal(ra.F, rb.F) and np.array_equal(a.bits, b.bits)


def test_run_chain_thin_and_schedule(box3):
    st = init_chain(box3, CMAX, 1.5, seed=0)
    res = run_chain(st, 10, burn_in=3, thin=7)
    assert len(res) == 1 and res.sweep.tolist() == [10]
    st = init_chain(box3, CMAX, 1.5, seed=0)
    res = run_chain(st, 10, burn_in=2, thin=3)
    assert res.sweep.tolist() == [5, 8]
    assert np.allclose(res.p_n, np.exp(-res.F / 3**1.5))
    with pytest.raises(ValueError):
        run_chain(st, 5, burn_in=5)
    with pytest.raises(ValueError):
        run_chain(st, 5, thin=0)


def test_run_chain_deterministic(box3):
    r1 = run_chain(init_chain(box3, CMAX, 1.5, seed=6), 200, 10)
    r2 = run_chain(init_chain(box3, CMAX, 1.5, seed=6), 200, 10)
    assert np.array_equal(r1.F, r2.F)
    r3 = run_chain(init_chain(box3, CMAX, 1.5, seed=7), 200, 10)
    assert not np.array_equal(r1.F, r3.F)


def test_boundary_F_at_least_boundary_size(box3):
    res = run_chain(init_chain(box3, BOUNDARY, 1.0, seed=2), 5000, 10)
    assert res.F.min() >= 8


def test_stationary_law_matches_oracle(box3):
    """TV distance between the chain's law of F and the exact law, 10^6 samples."""
    exact = enumerate_measure(box3, CMAX, 1.5).law_of_F
    runs = run_chains(box3, CMAX, 1.5, chains=4, sweeps=250_010, burn_in=10, thin=1, seed=11)
    F = np.concatenate([r.F for r in runs])
    assert F.size == 10**6
    emp = np.bincount(F, minlength=10) / F.size
    tv = 0.5 * sum(abs(emp[k] - exact.get(k, 0.0)) for k in range(10))
    assert tv <= 0.02


@pytest.mark.parametrize("kind", [CMAX, BOUNDARY, BNB])
def test_visits_positive_weight_support(box2, kind):
    ex = enumerate_measure(box2, kind, 1.0)
    st = init_chain(box2, kind, 1.0, seed=5)
    pw = 1 << np.arange(box2.num_edges)
    seen = np.zeros(16, dtype=bool)
    for _ in range(100_000):
        mh_step(st)
        seen[int(st.bits @ pw)] = True
    assert np.array_equal(seen, ex.per_config_weights > 0)


@pytest.mark.parametrize("kind", [CMAX, BOUNDARY, BNB])
def test_single_flip_graph_connected(box3, kind):
    """Every positive-weight configuration of Lambda(3) is reachable from all-open by positive-weight flips."""
    w = enumerate_measure(box3, kind, 1.0).per_config_weights > 0
    r = box3.num_edges
    seen = np.zeros(w.size, dtype=bool)
    start = (1 << r) - 1
    seen[start] = True
    frontier = np.array([start])
    while frontier.size:
        nxt = (frontier[:, None] ^ (1 << np.arange(r))[None, :]).ravel()
        nxt = np.unique(nxt[w[nxt] & ~seen[nxt]])
        seen[nxt] = True
        frontier = nxt
    assert np.array_equal(seen, w)


def test_run_chains_workers_and_seeds():
    box = build_box(2, 5)
    seq = run_chains(box, CMAX, 1.5, 3, 40, 5, 1, seed=3, workers=1)
    par = run_chains(box, CMAX, 1.5, 3, 40, 5, 1, seed=3, workers=3)
    for x, y in zip(seq, par):
        assert np.array_equal(x.F, y.F)
    assert not np.array_equal(seq[0].F, seq[1].F)
    ss = run_chains(box, CMAX, 1.5, 3, 40, 5, 1, seed=np.random.SeedSequence(3))
    assert all(np.array_equal(x.F, y.F) for x, y in zip(seq, ss))


def test_gelman_rubin():
    rng = np.random.default_rng(0)
    same = [rng.normal(size=5000) for _ in range(4)]
    assert gelman_rubin(same) == pytest.approx(1.0, abs=0.01)
    apart = [rng.normal(loc=k, size=5000) for k in range(4)]
    assert gelman_rubin(apart) > 1.5
    assert math.isnan(gelman_rubin([np.ones(10)]))
