"""
How fragile is a good slate?
============================

Take logged slates, swap a few items for similar ones, and score them
again. Replacing three of five items already moves the expected clicks
most of the way towards a random slate.
"""
import numpy as np

from slaterec import evalkit as ev
from slaterec import simenv as se

env = se.build_environment(se.SimConfig(n_items=300, n_users=100, relation_weight=0.5, seed=1))
d = se.generate_dataset(env, 10_000, np.random.default_rng(0))
study = ev.perturbation_study(d, env, [0, 1, 3, 5], np.random.default_rng(1), n_trials=2000)

for a, shift in study.mean_abs_shift.items():
    print(f"a={a}: mean |ENC shift| {shift:.3f}")

print("\nmean ENC after perturbation (rows: observed clicks, columns: a)")
for g in range(6):
    row = [study.values[(g, a)].mean() for a in study.a_values]
    print(g, " ".join(f"{v:.2f}" for v in row))
