import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from slaterec import evalkit as ev
from slaterec import simenv as se
from slaterec.dataio import Dataset
from slaterec.models import EmbeddingBank, FixedSlatePolicy, UniformRandomPolicy


def toy_env(n_items=6, seed=3, kind="URM_P_MR", rho=0.5):
    cfg = se.SimConfig(n_items=n_items, n_users=2, kind=kind, relation_weight=rho, seed=seed)
    return se.build_environment(cfg)


def saturated_env(n_items=10):
    cfg = se.SimConfig(n_items=n_items, n_users=1, kind="URM", global_bias=60.0, bias_std=0.0)
    env = se.build_environment(cfg)
    env.item_vecs[:] = 0
    env.user_vecs[:] = 0
    return env


# ---------------------------------------------------------------------------
# variance decomposition


def test_variance_hand_example():
    x = np.array([[[0.0], [2.0]], [[4.0], [6.0]]])
    assert ev.variance_decomposition(x) == (5.0, 4.0, 1.0)


def test_variance_identical_slates_is_zero():
    x = np.ones((7, 5, 3))
    assert ev.variance_decomposition(x) == (0.0, 0.0, 0.0)


def test_variance_matches_direct_definition():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(9, 5, 4))
    flat = x.reshape(-1, 4)
    direct_total = np.mean(np.sum((flat - flat.mean(0)) ** 2, axis=1))
    assert ev.variance_decomposition(x)[0] == pytest.approx(direct_total, rel=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 50), st.integers(0, 2**31 - 1))
def test_variance_identity(N, seed):
    x = np.random.default_rng(seed).normal(size=(N, 5, 8)) * 3.0
    total, smean, intra = ev.variance_decomposition(x)
    assert abs(total - (smean + intra)) <= 1e-9 * max(total, 1e-300)
    assert smean <= total + 1e-12 and intra <= total + 1e-12


def test_variance_sample_set_averages_users():
    table = np.arange(10, dtype=float)[:, None]
    s = ev.SampleSet([0, 1], [[[0, 2]] * 2, [[0, 2], [4, 6]]], table)
    total, smean, intra = ev.variance_decomposition(s)
    assert (total, smean, intra) == (3.0, 2.0, 1.0)


def test_variance_empty_raises():
    with pytest.raises(ValueError):
        ev.variance_decomposition(np.zeros((0, 5, 2)))


# ---------------------------------------------------------------------------
# coverage


def test_coverage_hand_example():
    s = ev.SampleSet([0], [[[1, 2, 3, 4, 5], [4, 5, 6, 7, 8]]], np.zeros((100, 1)))
    assert ev.coverage(s, 100) == 0.08


def test_coverage_deterministic_policy():
    pol = FixedSlatePolicy(np.array([3, 1, 4, 0, 9]))
    s = ev.sample_slates(pol, [0, 1, 2], 500, None, EmbeddingBank(np.zeros((40, 2))))
    assert ev.coverage(s, 40) == 5 / 40


def test_coverage_monotone_in_n_and_reaches_one():
    pol = UniformRandomPolicy(30, allow_repeats=False)
    s = ev.sample_slates(pol, [0], 400, np.random.default_rng(0), EmbeddingBank(np.zeros((30, 1))))
    values = [ev.coverage(ev.SampleSet([0], s.slates[:, :n], s.item_table), 30) for n in range(1, 401, 7)]
    assert all(b >= a for a, b in zip(values, values[1:]))
    assert values[-1] == 1.0


# ---------------------------------------------------------------------------
# ILD


def test_ild_examples():
    assert ev.ild([0, 0, 0, 0, 0], EmbeddingBank(np.zeros((1, 3)))) == 0.5
    assert ev.ild(range(5), EmbeddingBank(np.eye(5))) == 0.5


def test_ild_anti_aligned():
    # Gram matrix with every off-diagonal dot at -10; positive definite since 50 > 4 * 10
    G = 50.0 * np.eye(5) - 10.0 * (np.ones((5, 5)) - np.eye(5))
    V = np.linalg.cholesky(G)
    want = 1.0 - 1.0 / (1.0 + math.exp(10.0))
    assert ev.ild(range(5), EmbeddingBank(V)) == pytest.approx(want, abs=1e-12)
    assert want == pytest.approx(0.99995, abs=1e-5)


def test_ild_unnormalized_flag():
    bank = EmbeddingBank(np.zeros((5, 2)))
    assert ev.ild(range(5), bank, normalized=False) == pytest.approx(1 - 20 * 0.5)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_ild_permutation_invariant(seed):
    rng = np.random.default_rng(seed)
    bank = EmbeddingBank(rng.normal(size=(20, 4)))
    s = rng.choice(20, 5, replace=False)
    assert ev.ild(s, bank) == pytest.approx(ev.ild(rng.permutation(s), bank), abs=1e-12)
    assert 0.0 < ev.ild(s, bank) < 1.0


# ---------------------------------------------------------------------------
# ENC


def test_enc_all_interest_one():
    env = saturated_env()
    assert ev.enc([0, 1, 2, 3, 4], env, users=[0]) == 5.0


def test_enc_fixed_slate_independent_of_n():
    env = toy_env(n_items=20)
    slate = np.array([4, 2, 9, 11, 0])
    want = np.mean([se.expected_clicks(env, slate, u) for u in range(env.n_users)])
    for N in (1, 10, 500):
        assert ev.enc(FixedSlatePolicy(slate), env, N=N) == pytest.approx(want, abs=1e-12)


def test_enc_uniform_policy_matches_exhaustive_enumeration():
    env = toy_env(n_items=6)
    grid = np.array(list(itertools.product(range(6), repeat=5)))
    ec = se.expected_clicks(env, grid, np.zeros(len(grid), int))
    N = 10_000
    got = ev.enc(UniformRandomPolicy(6, allow_repeats=True), env, users=[0], N=N,
                 rng=np.random.default_rng(0))
    assert abs(got - ec.mean()) <= 3 * ec.std() / math.sqrt(N)


def test_enc_mixture_linearity():
    env = toy_env(n_items=20)
    a, b = np.array([0, 1, 2, 3, 4]), np.array([5, 6, 7, 8, 9])
    p = 0.3
    n = 1000
    block = np.array([a] * int(p * n) + [b] * (n - int(p * n)))
    s = ev.SampleSet([1], block[None], env.item_vecs)
    want = p * se.expected_clicks(env, a, 1) + (1 - p) * se.expected_clicks(env, b, 1)
    assert ev.enc(s, env) == pytest.approx(want, abs=1e-12)


# ---------------------------------------------------------------------------
# hit / recall


def test_hit_and_recall_hand_tally():
    test = Dataset(np.array([-1, -1, -1, -1]),
                   np.array([[0, 1, 2, 3, 4], [5, 6, 7, 8, 9], [10, 11, 12, 13, 14], [0, 1, 2, 3, 4]]),
                   np.array([[1, 1, 1, 1, 1], [1, 0, 1, 0, 0], [0, 0, 0, 0, 1], [0, 0, 0, 0, 0]]),
                   20)
    pol = FixedSlatePolicy(np.array([0, 1, 7, 15, 16]))
    hit, rec = ev.hit_and_recall(pol, test, 10, None)
    # slate 1: 2/5 matched; slate 2: 1/2 matched; slate 3: 0/1; slate 4 skipped
    assert hit == pytest.approx(2 / 3)
    assert rec == pytest.approx((0.4 + 0.5 + 0.0) / 3)


def test_hit_and_recall_perfect():
    test = Dataset(np.array([-1]), np.array([[0, 1, 2, 3, 4]]), np.ones((1, 5), int), 10)
    assert ev.hit_and_recall(FixedSlatePolicy(np.array([4, 3, 2, 1, 0])), test, 5, None) == (1.0, 1.0)


# ---------------------------------------------------------------------------
# reports and perturbation study


def test_evaluate_report_invariants(tmp_path):
    env = toy_env(n_items=30)
    bank = EmbeddingBank(env.item_vecs)
    r = ev.evaluate(UniformRandomPolicy(30), env, bank, [0, 1], 50, np.random.default_rng(0),
                    env_name="toy", beta=0.5, seed=4)
    assert r.total_var == pytest.approx(r.slate_mean_var + r.intra_slate_var, rel=1e-9)
    assert 5 / 30 <= r.coverage <= 1
    ev.write_reports([r, r], tmp_path / "m.csv")
    lines = (tmp_path / "m.csv").read_text().splitlines()
    assert lines[0].startswith("model,env,beta,seed,N,enc")
    assert len(lines) == 3 and lines[1] == lines[2]


def ideal_slates(env, n, rng):
    slates = se.random_slates(rng, n, env.n_items, 5)
    return Dataset(np.zeros(n, int), slates, np.ones((n, 5), int), env.n_items)


def test_perturbation_zero_is_identity_and_shift_grows():
    env = toy_env(n_items=60, seed=1)
    d = ideal_slates(env, 400, np.random.default_rng(0))
    study = ev.perturbation_study(d, env, [0, 1, 3, 5], np.random.default_rng(1))
    shift = study.mean_abs_shift
    assert shift[0] == 0.0
    assert shift[0] < shift[1] < shift[3]
    rows = study.table()
    assert sum(c for g, a, lo, hi, c in rows if a == 0) == 400


def test_perturbation_rejects_bad_a():
    env = toy_env(n_items=10)
    with pytest.raises(ValueError):
        ev.perturbation_study(ideal_slates(env, 5, np.random.default_rng(0)), env, [6],
                              np.random.default_rng(0))


def test_perturbation_csv(tmp_path):
    env = toy_env(n_items=30)
    d = ideal_slates(env, 50, np.random.default_rng(0))
    study = ev.perturbation_study(d, env, [0, 1], np.random.default_rng(0), n_bins=4)
    study.write_csv(tmp_path / "p.csv")
    lines = (tmp_path / "p.csv").read_text().splitlines()
    assert lines[0] == "group,a,bin_low,bin_high,count"
    assert len(lines) == 1 + 2 * 4
