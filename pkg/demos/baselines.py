"""
Discriminative baselines
========================

Greedy rankers fill the slate with the top-scored items. MMR re-ranks with
a similarity term, and the non-greedy wrapper resamples the first slot.
"""
import numpy as np

from slaterec import evalkit as ev
from slaterec import pipeline as pl
from slaterec.models import RankerConfig, RankerPolicy, train_pointwise_ranker

cfg = pl.parse_config("""
[sim]
n_items = 300
n_users = 100
relation_weight = 0.5
seed = 1
[data]
n_slates = 10000
""")
prep = pl.prepare(cfg)
users = np.arange(100)

for kind in ("MF", "NeuMF"):
    ranker = train_pointwise_ranker(kind, prep.train, RankerConfig(epochs=5, lr=3e-3, hidden=64),
                                    val=prep.val, n_users=100)
    for pol in (RankerPolicy(ranker, prep.bank),
                RankerPolicy(ranker, prep.bank, mmr_lambda=0.5),
                RankerPolicy(ranker, prep.bank, nongreedy=True)):
        r = ev.evaluate(pol, prep.env, prep.bank, users, 100, np.random.default_rng(0), test=prep.test)
        print(f"{r.model:14s} ENC {r.enc:.3f}  coverage {r.coverage:.4f}  "
              f"ILD {r.ild_mean:.3f}  hit {r.hit_rate:.3f}  recall {r.recall:.3f}")
