"""Uniform slate-producing wrappers around every model type.

A policy answers ``sample(users, n, rng) -> (len(users), n, K)`` item ids.
User id ``-1`` stands for the universal user of non-personalised models.
"""
from __future__ import annotations

import numpy as np

from .common import EmbeddingBank, nongreedy_perturb
from .cvae import ListCvae, generate_slates
from .rankers import PointwiseRanker, mmr_rerank, rank_topk


class SlatePolicy:
    name = "policy"
    stochastic = True
    slate_size = 5

    def sample(self, users, n: int, rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError


class FixedSlatePolicy(SlatePolicy):
    """Always recommends the same slate (or a per-user slate from a dict)."""

    stochastic = False

    def __init__(self, slate, name: str = "fixed"):
        self.slate = slate
        self.name = name
        self.slate_size = len(next(iter(slate.values()))) if isinstance(slate, dict) else len(slate)

    def sample(self, users, n, rng):
        users = np.asarray(users)
        rows = [self.slate[int(u)] if isinstance(self.slate, dict) else self.slate for u in users]
        return np.repeat(np.asarray(rows, dtype=np.int64)[:, None, :], n, axis=1)


class UniformRandomPolicy(SlatePolicy):
    def __init__(self, n_items: int, slate_size: int = 5, allow_repeats: bool = True):
        self.n_items, self.slate_size, self.allow_repeats = n_items, slate_size, allow_repeats
        self.name = "Random"

    def sample(self, users, n, rng):
        from ..simenv import random_slates
        U = len(np.asarray(users))
        return random_slates(rng, U * n, self.n_items, self.slate_size,
                             self.allow_repeats).reshape(U, n, self.slate_size)


class RankerPolicy(SlatePolicy):
    """Top-K (optionally MMR re-ranked), optionally with the first slot resampled."""

    def __init__(self, ranker: PointwiseRanker, bank: EmbeddingBank | None = None, K: int = 5,
                 nongreedy: bool = False, mmr_lambda: float | None = None,
                 mmr_classic: bool = False, temperature: float = 1.0):
        self.ranker, self.bank, self.slate_size = ranker, bank or ranker.bank(), K
        self.nongreedy, self.mmr_lambda, self.mmr_classic = nongreedy, mmr_lambda, mmr_classic
        self.temperature = temperature
        self.stochastic = nongreedy
        base = ranker.kind if mmr_lambda is None else f"{ranker.kind}-MMR"
        self.name = f"NonGreedy-{base}" if nongreedy else base
        self._cache: dict = {}

    def base_slate(self, user):
        key = int(user)
        if key not in self._cache:
            u = None if key < 0 else key
            if self.mmr_lambda is None:
                self._cache[key] = rank_topk(self.ranker, u, self.slate_size)
            else:
                self._cache[key] = mmr_rerank(self.ranker, self.bank, u, self.slate_size,
                                              self.mmr_lambda, self.mmr_classic)
        return self._cache[key]

    def sample(self, users, n, rng):
        users = np.asarray(users)
        out = np.stack([np.tile(self.base_slate(u), (n, 1)) for u in users])
        if self.nongreedy:
            flat = out.reshape(-1, self.slate_size)
            out = nongreedy_perturb(flat, 1, self.bank, rng, self.temperature).reshape(out.shape)
        return out


class CvaePolicy(SlatePolicy):
    """Generates from the conditional prior at the ideal constraint."""

    def __init__(self, model: ListCvae, nongreedy: bool = False, name: str | None = None,
                 temperature: float = 1.0):
        self.model, self.nongreedy, self.temperature = model, nongreedy, temperature
        self.slate_size = model.K
        base = getattr(model, "variant", None)
        base = f"PivotCVAE-{base}" if base else "ListCVAE"
        self.name = name or (f"NonGreedy-{base}" if nongreedy else base)

    def constraints_for(self, users, n):
        users = np.repeat(np.asarray(users), n)
        return self.model.ideal_constraints(users if self.model.personalised else None, len(users))

    def sample(self, users, n, rng, return_z: bool = False):
        U = len(np.asarray(users))
        c = self.constraints_for(users, n)
        slates, z = generate_slates(self.model, c, rng, return_z=True)
        if self.nongreedy:
            slates = nongreedy_perturb(slates, 1, self.model.bank, rng, self.temperature)
        slates = slates.reshape(U, n, self.slate_size)
        return (slates, z.reshape(U, n, -1)) if return_z else slates
