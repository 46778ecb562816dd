"""Slate datasets: ingestion of rating logs, response balancing, constraints and splits."""
from __future__ import annotations

import logging
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

log = logging.getLogger(__name__)

NO_USER = -1


class ParseError(ValueError):
    pass


@dataclass
class Dataset:
    """Slate/response records stored column-wise.

    ``users[i] == -1`` marks a record without a user id.
    """

    users: np.ndarray      # (n,) int
    slates: np.ndarray     # (n, K) int
    responses: np.ndarray  # (n, K) int in {0, 1}
    n_items: int
    slate_size: int = 5

    def __post_init__(self):
        K = self.slate_size
        self.users = np.asarray(self.users, dtype=np.int64).reshape(-1)
        self.slates = np.asarray(self.slates, dtype=np.int64).reshape(-1, K)
        self.responses = np.asarray(self.responses, dtype=np.int64).reshape(-1, K)
        n = len(self.users)
        if self.slates.shape[0] != n or self.responses.shape[0] != n:
            raise ValueError("users, slates and responses must have equal length")
        if n and (self.slates.min() < 0 or self.slates.max() >= self.n_items):
            raise ValueError("slate item id outside the item universe")
        if n and not np.isin(self.responses, (0, 1)).all():
            raise ValueError("responses must be binary")

    def __len__(self):
        return len(self.users)

    @classmethod
    def empty(cls, n_items: int, slate_size: int = 5) -> "Dataset":
        return cls(np.zeros(0), np.zeros((0, slate_size)), np.zeros((0, slate_size)),
                   n_items, slate_size)

    @property
    def has_users(self) -> bool:
        return bool(len(self)) and bool((self.users >= 0).any())

    @property
    def clicks(self) -> np.ndarray:
        return self.responses.sum(axis=1)

    def subset(self, index) -> "Dataset":
        index = np.asarray(index, dtype=np.int64)
        return Dataset(self.users[index], self.slates[index], self.responses[index],
                       self.n_items, self.slate_size)

    def records(self):
        for u, s, r in zip(self.users, self.slates, self.responses):
            yield (None if u < 0 else int(u)), tuple(int(i) for i in s), tuple(int(x) for x in r)


# ---------------------------------------------------------------------------
# ingestion


def read_ratings(path) -> list[tuple[int, int, int, int]]:
    """Parse a ``user<TAB>item<TAB>rating<TAB>timestamp`` file."""
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 4:
                raise ParseError(f"{path}:{lineno}: expected 4 tab-separated fields, got {len(parts)}")
            try:
                user, item, rating, ts = (int(p) for p in parts)
            except ValueError as exc:
                raise ParseError(f"{path}:{lineno}: {exc}") from None
            if not 1 <= rating <= 5:
                raise ParseError(f"{path}:{lineno}: rating {rating} outside 1..5")
            rows.append((user, item, rating, ts))
    return rows


def sessions_to_slates(log_rows: Iterable[tuple[int, int, int, int]], K: int = 5,
                       positive_threshold: int = 4, n_items: int | None = None) -> Dataset:
    """Chunk each user's time-ordered ratings into consecutive slates of ``K`` items.

    A trailing remainder shorter than ``K`` is dropped. Responses are 1 where
    the rating is at least ``positive_threshold``. Item ids are used as given,
    so ``n_items`` defaults to ``max(item) + 1``.
    """
    per_user = defaultdict(list)
    max_item = -1
    for row in log_rows:
        user, item, rating, ts = row
        per_user[user].append((ts, item, rating))
        max_item = max(max_item, item)
    n_items = n_items if n_items is not None else max_item + 1
    users, slates, resps = [], [], []
    for user in sorted(per_user):
        hist = sorted(per_user[user], key=lambda t: t[0])
        for start in range(0, len(hist) - K + 1, K):
            chunk = hist[start:start + K]
            users.append(user)
            slates.append([it for _, it, _ in chunk])
            resps.append([int(r >= positive_threshold) for _, _, r in chunk])
    if not users:
        return Dataset.empty(max(n_items, 1), K)
    return Dataset(np.array(users), np.array(slates), np.array(resps), n_items, K)


def remap_ids(rows):
    """Map raw user/item ids in a rating log onto dense ``0..n-1`` ranges."""
    umap, imap = {}, {}
    out = []
    for user, item, rating, ts in rows:
        u = umap.setdefault(user, len(umap))
        i = imap.setdefault(item, len(imap))
        out.append((u, i, rating, ts))
    return out, umap, imap


# ---------------------------------------------------------------------------
# balancing / constraints / splits


def balance_responses(d: Dataset, rng: np.random.Generator) -> Dataset:
    """Grow every click-count group to at least half the size of the largest one.

    Missing records are drawn uniformly with replacement from the group and
    appended after the original records. Empty groups are logged and stay empty.
    """
    if len(d) == 0:
        return d
    clicks = d.clicks
    sizes = np.bincount(clicks, minlength=d.slate_size + 1)
    target = -(-int(sizes.max()) // 2)
    extra = []
    for g in range(d.slate_size + 1):
        if sizes[g] >= target:
            continue
        members = np.flatnonzero(clicks == g)
        if members.size == 0:
            log.warning("response group with %d clicks is empty; cannot balance it", g)
            continue
        extra.append(rng.choice(members, size=target - sizes[g], replace=True))
    if not extra:
        return d
    index = np.concatenate([np.arange(len(d))] + extra)
    return d.subset(index)


def make_constraint(r, user_embedding=None) -> np.ndarray:
    """One-hot of the click count (length K+1), optionally followed by a user vector.

    Works on a single response vector or a batch ``(n, K)``.
    """
    r = np.asarray(r)
    K = r.shape[-1]
    onehot = np.eye(K + 1)[r.sum(axis=-1).astype(int)]
    if user_embedding is None:
        return onehot
    return np.concatenate([onehot, np.asarray(user_embedding, dtype=float)], axis=-1)


def ideal_response(K: int = 5) -> np.ndarray:
    return np.ones(K, dtype=np.int64)


def split_dataset(d: Dataset, fractions=(0.8, 0.1, 0.1), seed: int = 0):
    """Shuffle by ``seed`` and cut into contiguous train/val/test slices."""
    fr = np.asarray(fractions, dtype=float)
    if fr.shape != (3,) or (fr < 0).any() or not np.isclose(fr.sum(), 1.0):
        raise ValueError(f"fractions must be three non-negatives summing to 1, got {fractions}")
    n = len(d)
    perm = np.random.default_rng(seed).permutation(n)
    cuts = np.rint(np.cumsum(fr) * n).astype(int)
    cuts[-1] = n
    a, b = cuts[0], cuts[1]
    return d.subset(perm[:a]), d.subset(perm[a:b]), d.subset(perm[b:])


# ---------------------------------------------------------------------------
# file formats


def write_dataset(d: Dataset, path):
    with open(path, "w") as fh:
        fh.write(f"#slate_size={d.slate_size} items={d.n_items}\n")
        for u, s, r in zip(d.users, d.slates, d.responses):
            user = "-" if u < 0 else str(u)
            fh.write(f"{user}\t{','.join(map(str, s))}\t{''.join(map(str, r))}\n")


def read_dataset(path) -> Dataset:
    with open(path) as fh:
        header = fh.readline().strip()
        if not header.startswith("#"):
            raise ParseError(f"{path}:1: missing header line")
        meta = dict(kv.split("=", 1) for kv in header[1:].split())
        K, n_items = int(meta["slate_size"]), int(meta["items"])
        users, slates, resps = [], [], []
        for lineno, line in enumerate(fh, 2):
            line = line.rstrip("\n")
            if not line:
                continue
            try:
                u, s, r = line.split("\t")
                slate = [int(x) for x in s.split(",")]
                resp = [int(ch) for ch in r]
            except ValueError:
                raise ParseError(f"{path}:{lineno}: malformed record") from None
            if len(slate) != K or len(resp) != K:
                raise ParseError(f"{path}:{lineno}: expected {K} items and responses")
            users.append(NO_USER if u == "-" else int(u))
            slates.append(slate)
            resps.append(resp)
    if not users:
        return Dataset.empty(n_items, K)
    return Dataset(np.array(users), np.array(slates), np.array(resps), n_items, K)


def write_manifest(path, entries: dict):
    Path(path).write_text("".join(f"{k}={v}\n" for k, v in entries.items()))


def read_manifest(path) -> dict:
    out = {}
    for line in Path(path).read_text().splitlines():
        if "=" in line:
            k, v = line.split("=", 1)
            out[k] = v
    return out
