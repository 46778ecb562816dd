"""Pointwise rankers (biased MF, NeuMF), embedding pretraining, top-K and MMR."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from .. import numkit as nk
from ..dataio import Dataset
from .common import EmbeddingBank


@dataclass
class RankerConfig:
    emb_dim: int = 8
    hidden: int = 256
    lr: float = 3e-4
    weight_decay: float = 1e-4
    batch: int = 64
    epochs: int = 20
    negatives: int = 2
    patience: int = 3
    seed: int = 0


@dataclass
class PointwiseRanker:
    kind: str           # "MF" or "NeuMF"
    params: nk.Params
    n_items: int
    personalised: bool
    history: list = field(default_factory=list)

    def _uidx(self, users):
        users = np.asarray(users, dtype=np.int64)
        return users if self.personalised else np.zeros_like(users)

    def logits(self, users, items):
        logit, _ = self._forward(users, items)
        return logit

    def _forward(self, users, items):
        p = self.params
        u = self._uidx(users)
        items = np.asarray(items, dtype=np.int64)
        U, V = p["user_emb"][u], p["item_emb"][items]
        if self.kind == "MF":
            logit = (U * V).sum(-1) + p["user_bias"][u] + p["item_bias"][items] + p["global_bias"][0]
            return logit, (u, items, U, V)
        x = np.concatenate([U, V], axis=-1)
        out, cache = nk.mlp_forward(p, "mlp", x)
        return out[..., 0], (u, items, cache)

    def loss(self, users, items, labels):
        p = self.params
        logit, cache = self._forward(users, items)
        n = len(labels)
        losses, dlogit = nk.bce_with_logits(logit, labels)
        dlogit = dlogit / n
        grads: nk.Params = {}
        if self.kind == "MF":
            u, items, U, V = cache
            grads["user_emb"] = nk.gather_backward(p["user_emb"].shape, u, dlogit[:, None] * V)
            grads["item_emb"] = nk.gather_backward(p["item_emb"].shape, items, dlogit[:, None] * U)
            grads["user_bias"] = np.bincount(u, dlogit, minlength=len(p["user_bias"]))
            grads["item_bias"] = np.bincount(items, dlogit, minlength=len(p["item_bias"]))
            grads["global_bias"] = np.array([dlogit.sum()])
        else:
            u, items, mcache = cache
            dx = nk.mlp_backward(p, "mlp", mcache, dlogit[:, None], grads)
            d = p["user_emb"].shape[1]
            grads["user_emb"] = nk.gather_backward(p["user_emb"].shape, u, dx[:, :d])
            grads["item_emb"] = nk.gather_backward(p["item_emb"].shape, items, dx[:, d:])
        return losses.sum() / n, grads

    def scores(self, user) -> np.ndarray:
        """Click probability for every item in the catalogue."""
        items = np.arange(self.n_items)
        return nk.sigmoid(self.logits(np.full(self.n_items, user if user is not None else 0), items))

    def bank(self) -> EmbeddingBank:
        p = self.params
        return EmbeddingBank(p["item_emb"].copy(),
                             p["user_emb"].copy() if self.personalised else None)


def pointwise_examples(d: Dataset, rng, negatives: int = 2):
    """Observed (user, item, click) triples plus ``negatives`` random items per click."""
    users = np.repeat(d.users, d.slate_size)
    items = d.slates.reshape(-1)
    labels = d.responses.reshape(-1).astype(float)
    pos = labels > 0
    n_neg = int(pos.sum()) * negatives
    neg_users = np.repeat(users[pos], negatives)
    neg_items = rng.integers(0, d.n_items, size=n_neg)
    return (np.concatenate([users, neg_users]), np.concatenate([items, neg_items]),
            np.concatenate([labels, np.zeros(n_neg)]))


def _auc(scores, labels) -> float:
    pos = labels > 0
    n_pos, n_neg = int(pos.sum()), int((~pos).sum())
    if n_pos == 0 or n_neg == 0:
        return 0.5
    ranks = rankdata(scores)
    return float((ranks[pos].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def train_pointwise_ranker(kind: str, train: Dataset, config: RankerConfig | None = None,
                           val: Dataset | None = None, n_users: int | None = None) -> PointwiseRanker:
    """Fit MF or NeuMF with pointwise BCE; early-stop on validation AUC when ``val`` is given."""
    if kind not in ("MF", "NeuMF"):
        raise ValueError(f"unknown ranker kind {kind!r}")
    if len(train) == 0:
        raise ValueError("cannot train a ranker on an empty dataset")
    cfg = config or RankerConfig()
    rng = np.random.default_rng(cfg.seed)
    personalised = train.has_users
    if n_users is None:
        n_users = int(train.users.max()) + 1 if personalised else 1
    params: nk.Params = {
        "user_emb": rng.normal(0, 0.1, size=(n_users, cfg.emb_dim)),
        "item_emb": rng.normal(0, 0.1, size=(train.n_items, cfg.emb_dim)),
    }
    if kind == "MF":
        params["user_bias"] = np.zeros(n_users)
        params["item_bias"] = np.zeros(train.n_items)
        params["global_bias"] = np.zeros(1)
    else:
        nk.init_mlp(params, "mlp", rng, 2 * cfg.emb_dim, cfg.hidden, 1)
    model = PointwiseRanker(kind, params, train.n_items, personalised)
    opt = nk.AdamState(lr=cfg.lr, weight_decay=cfg.weight_decay)
    val_ex = pointwise_examples(val, np.random.default_rng(cfg.seed + 1), cfg.negatives) \
        if val is not None and len(val) else None
    best, best_auc, stale = None, -math.inf, 0
    for epoch in range(cfg.epochs):
        users, items, labels = pointwise_examples(train, rng, cfg.negatives)
        perm = rng.permutation(len(labels))
        total = 0.0
        for start in range(0, len(perm), cfg.batch):
            idx = perm[start:start + cfg.batch]
            loss, grads = model.loss(users[idx], items[idx], labels[idx])
            if not math.isfinite(loss):
                raise nk.TrainingError(f"{kind} loss diverged at epoch {epoch}")
            nk.adam_step(opt, params, grads)
            total += loss * len(idx)
        rec = {"epoch": epoch, "loss": total / len(perm)}
        if val_ex is not None:
            auc = _auc(model.logits(val_ex[0], val_ex[1]), val_ex[2])
            rec["val_auc"] = auc
            if auc > best_auc + 1e-6:
                best_auc, stale = auc, 0
                best = {k: v.copy() for k, v in params.items()}
            else:
                stale += 1
        model.history.append(rec)
        if val_ex is not None and stale >= cfg.patience:
            break
    if best is not None:
        model.params = best
    return model


def pretrain_embeddings(train: Dataset, config: RankerConfig | None = None, env=None,
                        explicit: bool = False, n_users: int | None = None) -> EmbeddingBank:
    """Item/user tables for the generative models.

    With ``explicit`` and a simulator ``env`` the simulator's own vectors are
    exported unchanged; otherwise a biased MF model is trained and its tables frozen.
    """
    if explicit:
        if env is None or env.item_vecs is None:
            raise ValueError("explicit embeddings need a simulator environment")
        return EmbeddingBank(env.item_vecs, env.user_vecs)
    if len(train) == 0:
        raise ValueError("cannot pretrain embeddings on an empty dataset")
    return train_pointwise_ranker("MF", train, config, n_users=n_users).bank()


def rank_topk(ranker: PointwiseRanker, user, K: int = 5) -> np.ndarray:
    """Top-``K`` items by score, ties broken towards lower item ids."""
    if K > ranker.n_items:
        raise ValueError(f"K={K} exceeds the catalogue size {ranker.n_items}")
    order = np.argsort(-ranker.scores(user), kind="stable")
    return order[:K]


def mmr_rerank(ranker: PointwiseRanker, bank: EmbeddingBank, user, K: int = 5,
               lam: float = 0.5, mmr_classic: bool = False) -> np.ndarray:
    """Greedy marginal-relevance slate.

    Each step adds the unused item maximising
    ``lam * rel(d) + (1 - lam) * max_{d_i in slate} sim(d_i, d)`` where ``rel`` is
    the ranker score and ``sim`` the sigmoid dot product of item embeddings. The
    redundancy term is added as in the original formulation of this baseline;
    ``mmr_classic`` subtracts it instead. On the empty slate the term is 0.
    """
    if not 0.0 <= lam <= 1.0:
        raise ValueError("lambda must lie in [0, 1]")
    rel = ranker.scores(user)
    sim = nk.sigmoid(bank.item_table @ bank.item_table.T)
    sign = -1.0 if mmr_classic else 1.0
    chosen: list[int] = []
    redundancy = np.zeros(len(rel))
    for _ in range(K):
        score = lam * rel + sign * (1.0 - lam) * redundancy if chosen else lam * rel
        score = score.copy()
        score[chosen] = -np.inf
        best = int(np.argmax(score))
        chosen.append(best)
        redundancy = sim[best] if len(chosen) == 1 else np.maximum(redundancy, sim[best])
    return np.array(chosen)
