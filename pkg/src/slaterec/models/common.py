from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import numkit as nk


@dataclass
class EmbeddingBank:
    """Frozen item (and optional user) embedding tables shared by all models."""

    item_table: np.ndarray
    user_table: np.ndarray | None = None

    @property
    def n_items(self) -> int:
        return self.item_table.shape[0]

    @property
    def dim(self) -> int:
        return self.item_table.shape[1]

    def user_vectors(self, users) -> np.ndarray | None:
        if self.user_table is None:
            return None
        users = np.asarray(users, dtype=np.int64)
        if (users < 0).any():
            raise ValueError("personalised bank queried with a missing user id")
        return self.user_table[users]


def similarity_weights(query, item_table, temperature: float = 1.0) -> np.ndarray:
    """Unnormalised sampling weights ``sigmoid(q . v_i / T)`` over the whole catalogue."""
    return nk.sigmoid(np.atleast_2d(query) @ item_table.T / temperature)


def similarity_sample(query, item_table, rng: np.random.Generator,
                      temperature: float = 1.0) -> np.ndarray:
    """Draw one item per query row from the normalised sigmoid-dot weights."""
    w = similarity_weights(query, item_table, temperature)
    cdf = np.cumsum(w, axis=1)
    u = rng.random(w.shape[0]) * cdf[:, -1]
    idx = (cdf < u[:, None]).sum(axis=1)
    return np.minimum(idx, item_table.shape[0] - 1)


def nearest_items(latent, item_table) -> np.ndarray:
    """Dot-product nearest neighbour; ties resolve to the lowest item id."""
    return np.argmax(latent @ item_table.T, axis=-1)


def nearest_items_distinct(latent, item_table, first=None) -> np.ndarray:
    """Slot-by-slot nearest neighbour that skips items already placed in the slate.

    ``latent`` is ``(B, K, d)``; ``first``, when given, is an already chosen
    item per row that the remaining slots must avoid.
    """
    scores = latent @ item_table.T                      # (B, K, n)
    B, K, n = scores.shape
    taken = np.zeros((B, n), dtype=bool)
    rows = np.arange(B)
    if first is not None:
        taken[rows, first] = True
    out = np.empty((B, K), dtype=np.int64)
    for k in range(K):
        s = np.where(taken, -np.inf, scores[:, k])
        out[:, k] = np.argmax(s, axis=1)
        taken[rows, out[:, k]] = True
    return out


def nongreedy_perturb(slate, position: int, bank: EmbeddingBank, rng: np.random.Generator,
                      temperature: float = 1.0) -> np.ndarray:
    """Resample the item at 1-based ``position`` by similarity to the item already there.

    Accepts a single slate or a batch ``(B, K)``; other slots are copied unchanged.
    """
    slate = np.array(slate, dtype=np.int64)
    batch = np.atleast_2d(slate)
    if not 1 <= position <= batch.shape[1]:
        raise IndexError(f"position {position} outside 1..{batch.shape[1]}")
    col = position - 1
    batch[:, col] = similarity_sample(bank.item_table[batch[:, col]], bank.item_table, rng, temperature)
    return batch[0] if slate.ndim == 1 else batch
