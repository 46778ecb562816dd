"""
Measuring slate variety
=======================

Item variance splits exactly into the spread of slate centroids and the
spread inside each slate. Coverage and intra-list diversity round out the
picture.
"""
import numpy as np

from slaterec import evalkit as ev
from slaterec.models import EmbeddingBank, FixedSlatePolicy, UniformRandomPolicy

# Two slates of two one-dimensional items.
x = np.array([[[0.0], [2.0]], [[4.0], [6.0]]])
print("total, slate-mean, intra-slate:", ev.variance_decomposition(x))

###############################################################################
# A deterministic recommender always shows the same five items, so its
# coverage is stuck at 5/|D| while a random generator sweeps the catalogue.

rng = np.random.default_rng(0)
bank = EmbeddingBank(rng.normal(size=(200, 8)))
users = np.arange(10)
for pol in (FixedSlatePolicy(np.arange(5)), UniformRandomPolicy(200, allow_repeats=False)):
    s = ev.sample_slates(pol, users, 100, rng, bank)
    total, smean, intra = ev.variance_decomposition(s)
    print(f"{pol.name:7s} coverage {ev.coverage(s, 200):.3f}  "
          f"variance {total:.2f} = {smean:.2f} + {intra:.2f}")

###############################################################################
# ILD is one minus the mean pairwise sigmoid similarity.

print("orthogonal items:", ev.ild(range(5), EmbeddingBank(np.eye(5))))
print("five copies of one item:", ev.ild([0] * 5, EmbeddingBank(np.ones((1, 3)))))
