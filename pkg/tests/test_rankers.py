import itertools

import numpy as np
import pytest

from slaterec import numkit as nk
from slaterec.dataio import Dataset
from slaterec.models import (EmbeddingBank, PointwiseRanker, RankerConfig, RankerPolicy, mmr_rerank,
                             nongreedy_perturb, pretrain_embeddings, rank_topk, similarity_weights,
                             train_pointwise_ranker)
from slaterec.simenv import SimConfig, build_environment, generate_dataset, random_slates


def fixed_ranker(item_scores, dim=3, seed=0, n_users=1):
    """An MF ranker whose scores are exactly the given item biases."""
    n = len(item_scores)
    rng = np.random.default_rng(seed)
    params = {"user_emb": np.zeros((n_users, dim)), "item_emb": rng.normal(size=(n, dim)),
              "user_bias": np.zeros(n_users), "item_bias": np.asarray(item_scores, float),
              "global_bias": np.zeros(1)}
    return PointwiseRanker("MF", params, n, personalised=n_users > 1)


def test_topk_ordering_and_ties():
    np.testing.assert_array_equal(rank_topk(fixed_ranker(-np.arange(10.0)), None), [0, 1, 2, 3, 4])
    np.testing.assert_array_equal(rank_topk(fixed_ranker(np.zeros(10)), None), [0, 1, 2, 3, 4])
    r = fixed_ranker(np.random.default_rng(1).normal(size=20))
    np.testing.assert_array_equal(rank_topk(r, None), rank_topk(r, None))
    with pytest.raises(ValueError):
        rank_topk(fixed_ranker(np.zeros(3)), None, K=5)


def brute_force_mmr(rel, V, K, lam, classic=False):
    chosen = []
    for _ in range(K):
        best, best_score = None, -np.inf
        for d in range(len(rel)):
            if d in chosen:
                continue
            red = max((1 / (1 + np.exp(-V[i] @ V[d])) for i in chosen), default=0.0)
            score = lam * rel[d] + (-1 if classic else 1) * (1 - lam) * red
            if score > best_score:
                best, best_score = d, score
        chosen.append(best)
    return chosen


@pytest.mark.parametrize("seed", range(5))
@pytest.mark.parametrize("lam", [0.0, 0.3, 0.5, 0.9])
@pytest.mark.parametrize("classic", [False, True])
def test_mmr_matches_brute_force_on_4_items(seed, lam, classic):
    ranker = fixed_ranker(np.random.default_rng(seed).normal(size=4), seed=seed + 10)
    bank = ranker.bank()
    got = mmr_rerank(ranker, bank, None, K=2, lam=lam, mmr_classic=classic)
    want = brute_force_mmr(ranker.scores(None), bank.item_table, 2, lam, classic)
    assert list(got) == want


def test_mmr_lambda_one_is_topk_for_every_user():
    rng = np.random.default_rng(2)
    n_users, n_items = 8, 50
    params = {"user_emb": rng.normal(size=(n_users, 4)), "item_emb": rng.normal(size=(n_items, 4)),
              "user_bias": rng.normal(size=n_users), "item_bias": rng.normal(size=n_items),
              "global_bias": np.zeros(1)}
    r = PointwiseRanker("MF", params, n_items, personalised=True)
    for u in range(n_users):
        np.testing.assert_array_equal(mmr_rerank(r, r.bank(), u, 5, 1.0), rank_topk(r, u, 5))


def separable_toy(n_users=5, n_items=12, n=1500, seed=0):
    rng = np.random.default_rng(seed)
    favourite = np.arange(n_users) * 2 + 1
    users = rng.integers(0, n_users, n)
    slates = random_slates(rng, n, n_items, 5)
    slates[:, 0] = np.where(rng.random(n) < 0.5, favourite[users], slates[:, 0])
    bad = (slates[:, 1:] == slates[:, :1]).any(axis=1)
    slates, users = slates[~bad], users[~bad]
    resp = (slates == favourite[users][:, None]).astype(int)
    return Dataset(users, slates, resp, n_items), favourite


@pytest.mark.parametrize("kind", ["MF", "NeuMF"])
def test_ranker_recovers_favourite_item(kind):
    d, fav = separable_toy()
    r = train_pointwise_ranker(kind, d, RankerConfig(epochs=15, lr=3e-3, hidden=32, seed=1))
    for u, f in enumerate(fav):
        assert rank_topk(r, u, 5)[0] == f


def test_ranker_defaults():
    cfg = RankerConfig()
    assert cfg.lr == 0.0003 and cfg.weight_decay == 1e-4 and cfg.negatives == 2 and cfg.batch == 64


def test_ranker_gradients():
    d, _ = separable_toy(n=40)
    for kind in ("MF", "NeuMF"):
        r = train_pointwise_ranker(kind, d, RankerConfig(epochs=1, hidden=5))
        users, items = d.users[:10], d.slates[:10, 0]
        labels = d.responses[:10, 0].astype(float)
        assert nk.grad_check(lambda p: r.loss(users, items, labels), r.params, 1e-5) < 1e-6


def test_early_stopping_on_validation_auc():
    d, _ = separable_toy(n=600)
    r = train_pointwise_ranker("MF", d, RankerConfig(epochs=30, lr=1e-2, patience=2), val=d.subset(range(100)))
    assert "val_auc" in r.history[0]
    assert len(r.history) <= 30


def test_pretrain_explicit_returns_simulator_tables():
    env = build_environment(SimConfig(n_items=30, n_users=5))
    bank = pretrain_embeddings(Dataset.empty(30), env=env, explicit=True)
    assert bank.item_table is env.item_vecs or np.array_equal(bank.item_table, env.item_vecs)
    assert np.array_equal(bank.user_table, env.user_vecs)


def test_pretrain_empty_raises():
    with pytest.raises(ValueError):
        pretrain_embeddings(Dataset.empty(10))


def test_pretrain_learns_co_click_signal():
    rng = np.random.default_rng(0)
    n, n_items = 3000, 20
    users = rng.integers(0, 10, n)
    slates = random_slates(rng, n, n_items, 5)
    fans = users < 5
    slates[fans, 0], slates[fans, 1] = 1, 2
    slates[fans, 2:] = np.where(np.isin(slates[fans, 2:], [1, 2]), 0, slates[fans, 2:])
    resp = np.zeros((n, 5), int)
    resp[fans, :2] = 1
    d = Dataset(users, slates, resp, n_items)
    bank = pretrain_embeddings(d, RankerConfig(epochs=10, lr=3e-3, seed=0))
    V = bank.item_table
    others = [V[1] @ V[j] for j in range(3, n_items)]
    assert V[1] @ V[2] > np.mean(others)


def test_nongreedy_single_item_universe():
    bank = EmbeddingBank(np.ones((1, 3)))
    s = np.zeros(5, int)
    np.testing.assert_array_equal(nongreedy_perturb(s, 1, bank, np.random.default_rng(0)), s)


def test_nongreedy_prefers_original_when_self_similarity_dominates():
    # scaled orthogonal embeddings: self weight sigmoid(4) vs sigmoid(0) for the rest
    V = 2.0 * np.eye(8)
    bank = EmbeddingBank(V)
    w = similarity_weights(V[5], V)[0]
    assert np.argmax(w) == 5
    s = np.array([5, 0, 1, 2, 3])
    draws = nongreedy_perturb(np.tile(s, (20_000, 1)), 1, bank, np.random.default_rng(1))
    counts = np.bincount(draws[:, 0], minlength=8)
    assert np.argmax(counts) == 5
    assert (draws[:, 1:] == s[1:]).all()


def test_nongreedy_ranker_policy_only_touches_first_slot():
    r = fixed_ranker(-np.arange(30.0), dim=4)
    pol = RankerPolicy(r, nongreedy=True)
    out = pol.sample(np.array([-1]), 200, np.random.default_rng(0))[0]
    np.testing.assert_array_equal(out[:, 1:], np.tile([1, 2, 3, 4], (200, 1)))
    assert len(np.unique(out[:, 0])) > 1
    assert pol.name == "NonGreedy-MF"
