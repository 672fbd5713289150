"""Walkthrough: the feedback measure on small boxes, exact and sampled.

Run with ``python demos/self_tuning_walkthrough.py``. Takes about a minute.

1. On Lambda(3) the measure is enumerated exactly and compared with the
   Metropolis sampler and with the coupling estimate of Z_n.
2. On growing boxes the sampled law of p_n tightens around 1/2.
"""
import numpy as np

from socperc import FunctionalKind, build_box
from socperc.coupling import estimate_Zn
from socperc.experiments import ExperimentConfig, concentration_study
from socperc.oracle import enumerate_measure
from socperc.sampler import run_chains

cmax = FunctionalKind.cmax()
box = build_box(2, 3)

exact = enumerate_measure(box, cmax, 1.5)
print(f"Lambda(3), |C_max|, a = 1.5: Z_n = {exact.Zn:.6f}, E[p_n] = {exact.mean_p():.4f}")

runs = run_chains(box, cmax, 1.5, chains=2, sweeps=50_000, burn_in=100, thin=1, seed=1)
F = np.concatenate([r.F for r in runs])
emp = np.bincount(F, minlength=10) / F.size
print(" F   exact     sampled")
for k, w in exact.law_of_F.items():
    print(f"{k:2d}   {w:.5f}   {emp[k]:.5f}")

est = estimate_Zn(box, 1.5, cmax, 50_000, rng=2)
print(f"coupling: P(fixed point) = {est.value:.4f} +- {est.stderr:.4f}  (exact {exact.Zn:.4f})")

cfg = ExperimentConfig(d=2, n_list=(8, 16, 32), kind="cmax", a=1.5, chains=2, sweeps=1500, burn_in=500, seed=3)
print("\n  n   mean p_n   q05     q95     P(|p_n - 1/2| >= 0.1)")
for row in concentration_study(cfg).rows:
    print(f"{row['n']:3d}   {row['mean_p']:.4f}    {row['q05']:.4f}  {row['q95']:.4f}  {row['tail_0.1']:.4f}")
