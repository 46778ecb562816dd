"""
User-response simulators
========================

Three click simulators share one biased-MF interest score and differ in
what else they let into it: a personal positional bias, and a relation
term that depends on the whole slate.
"""
import numpy as np

from slaterec import simenv as se

rng = np.random.default_rng(0)
slate, user = np.array([3, 14, 15, 92, 65]), 6

for kind, rho in [("URM", 0.0), ("URM_P", 0.0), ("URM_P_MR", 0.5)]:
    env = se.build_environment(se.SimConfig(n_items=300, n_users=100, kind=kind,
                                            relation_weight=rho, seed=1))
    p = se.slate_interest(env, slate[None], [user])[0]
    print(f"{kind:9s} interest {np.round(p, 3)}  expected clicks {p.sum():.3f}")

###############################################################################
# Only the relation simulator cares about the rest of the slate: swapping
# slots 2..5 for other items moves the first item's click probability. The
# relation term is large enough that the outer clip to [0, 1] often bites.

env = se.build_environment(se.SimConfig(n_items=300, n_users=100, relation_weight=0.5, seed=1))
other = slate.copy()
other[1:] = [200, 201, 202, 203]
print("first-slot interest, original vs new context:",
      se.slate_interest(env, slate[None], [user])[0, 0],
      se.slate_interest(env, other[None], [user])[0, 0])

###############################################################################
# Sampled responses agree with the analytic expectation.

clicks = se.sample_response(env, np.tile(slate, (50_000, 1)), user, rng).sum(axis=1)
print(f"sampled mean clicks {clicks.mean():.3f} vs expected {se.expected_clicks(env, slate, user):.3f}")

###############################################################################
# A simulated log is balanced so that rarer click counts are not swamped.

d = se.generate_dataset(env, 10_000, rng)
print("records per click count after balancing:", np.bincount(d.clicks, minlength=6))
