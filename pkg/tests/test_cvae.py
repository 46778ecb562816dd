import numpy as np
import pytest
from scipy import stats

from slaterec import numkit as nk
from slaterec.models import (EmbeddingBank, PivotCvae, cvae_loss, cvae_loss_grad, generate_slate,
                             generate_slates, pivot_select, reconstruct, similarity_weights)
from slaterec.models.cvae import CvaeConfig, build_cvae, train_cvae
from slaterec.dataio import Dataset

from conftest import tiny_bank, tiny_batch


def _tower(p, prefix, x):
    h = np.maximum(nk.affine_apply(p[f"{prefix}.W1"], p[f"{prefix}.b1"], x), 0.0)
    return nk.affine_apply(p[f"{prefix}.W2"], p[f"{prefix}.b2"], h)


def hand_loss(model, slates, c, noise, negs, pivot_items=None):
    """Per-slate assembly from scalar primitives, independent of the batched path."""
    p, V, m, K = model.params, model.bank.item_table, model.m, model.K
    total = recon_sum = kl_sum = 0.0
    for b in range(len(slates)):
        s = slates[b]
        q_out = _tower(p, "enc", np.concatenate([V[s].ravel(), c[b]]))
        p_out = _tower(p, "prior", c[b])
        q = nk.GaussianParams(q_out[:m], q_out[m:])
        pr = nk.GaussianParams(p_out[:m], p_out[m:])
        z = nk.reparameterize(q, noise[b])
        zc = np.concatenate([z, c[b]])
        if isinstance(model, PivotCvae):
            pivot = s[0] if pivot_items is None else pivot_items[b]
            x1 = _tower(p, "pivot", zc)
            rest = _tower(p, "comp", np.concatenate([V[pivot], zc])).reshape(K - 1, -1)
            xhat = np.vstack([x1, rest])
        else:
            xhat = _tower(p, "dec", zc).reshape(K, -1)
        recon = sum(nk.sampled_softmax_ce(xhat[k] @ V[s[k]], [xhat[k] @ V[j] for j in negs[b, k]])
                    for k in range(K))
        kl = nk.gaussian_kl(q, pr)
        recon_sum += recon
        kl_sum += kl
        total += recon + model.beta * kl
    n = len(slates)
    return total / n, recon_sum / n, kl_sum / n


def _check_grads(model, pivot_items=None):
    slates, c, noise, negs = tiny_batch(model)

    def fn(params):
        loss, _, grads = cvae_loss_grad(model, slates, c, noise, negs, pivot_items)
        return loss, grads

    return nk.grad_check(fn, model.params, h=1e-4)


def test_list_cvae_grad_check(tiny_list):
    assert _check_grads(tiny_list) < 1e-4


def test_pivot_cvae_grad_check(tiny_pivot):
    pivots = np.array([3, 7, 7, 0]) if tiny_pivot.perturb_train else None
    assert _check_grads(tiny_pivot, pivots) < 1e-4


def test_loss_matches_hand_assembly(tiny_list, tiny_pivot):
    for model, piv in ((tiny_list, None), (tiny_pivot, np.array([1, 2, 3, 4]))):
        slates, c, noise, negs = tiny_batch(model)
        loss, parts = cvae_loss(model, slates, c, noise, negs, piv)
        ref, ref_recon, ref_kl = hand_loss(model, slates, c, noise, negs, piv)
        assert loss == pytest.approx(ref, abs=1e-10)
        assert parts["recon"] == pytest.approx(ref_recon, abs=1e-10)
        assert parts["kl"] == pytest.approx(ref_kl, abs=1e-10)


def test_beta_zero_loss_is_reconstruction(tiny_list):
    tiny_list.beta = 0.0
    loss, parts = cvae_loss(tiny_list, *tiny_batch(tiny_list))
    assert loss == parts["recon"]


def test_posterior_equal_to_prior_gives_zero_kl(tiny_list):
    p = tiny_list.params
    for pre in ("enc", "prior"):
        p[f"{pre}.W2"][:] = 0.0
        p[f"{pre}.b2"][:] = np.linspace(-0.5, 0.5, p[f"{pre}.b2"].size)
    loss, parts = cvae_loss(tiny_list, *tiny_batch(tiny_list))
    assert parts["kl"] == 0.0
    assert loss == parts["recon"]


def test_dloss_dbeta_is_kl(tiny_list):
    batch = tiny_batch(tiny_list)
    h = 1e-4
    _, parts = cvae_loss(tiny_list, *batch)
    tiny_list.beta += h
    up, _ = cvae_loss(tiny_list, *batch)
    tiny_list.beta -= 2 * h
    down, _ = cvae_loss(tiny_list, *batch)
    assert (up - down) / (2 * h) == pytest.approx(parts["kl"], abs=1e-6)


# ---------------------------------------------------------------------------
# pivot selection


def pivot_model(item_table, x1, variant="GT-SPI"):
    bank = EmbeddingBank(np.asarray(item_table, float))
    model = PivotCvae(bank, variant=variant, latent_dim=2, hidden=4, personalised=False,
                      rng=np.random.default_rng(0))
    model.params["pivot.W2"][:] = 0.0
    model.params["pivot.b2"][:] = x1
    return model


def _zc(model, n=1):
    return np.zeros((n, model.m)), model.ideal_constraints(n=n)


def test_pivot_argmax():
    V = np.array([[0.0, 1.0], [3.0, 0.0], [0.0, -2.0], [0.0, 0.5]])
    model = pivot_model(V, [3.0, 0.0])
    z, c = _zc(model)
    assert pivot_select(model, z[0], c[0], perturb=False) == 1


def test_pivot_argmax_scale_covariant():
    rng = np.random.default_rng(4)
    V = rng.normal(size=(30, 3))
    x1 = rng.normal(size=3)
    base = pivot_select(pivot_model(V, x1), *[a[0] for a in _zc(pivot_model(V, x1))], perturb=False)
    for scale in (0.01, 3.0, 250.0):
        m = pivot_model(V * scale, x1)
        assert pivot_select(m, *[a[0] for a in _zc(m)], perturb=False) == base


def test_pivot_perturbation_symmetric_items():
    V = np.array([[1.0, 0.5], [1.0, 0.5], [-3.0, -3.0]])
    model = pivot_model(V, [0.4, 0.2])
    z, c = _zc(model, 10_000)
    picks = pivot_select(model, z, c, True, np.random.default_rng(9))
    counts = np.bincount(picks, minlength=3)
    assert stats.chisquare(counts[:2]).pvalue > 0.01


def test_pivot_perturbation_matches_multinomial():
    rng = np.random.default_rng(5)
    V = rng.normal(size=(5, 3))
    x1 = rng.normal(size=3)
    model = pivot_model(V, x1)
    w = similarity_weights(x1, V)[0]
    probs = w / w.sum()
    n = 100_000
    z, c = _zc(model, n)
    counts = np.bincount(pivot_select(model, z, c, True, np.random.default_rng(6)), minlength=5)
    sd = np.sqrt(n * probs * (1 - probs))
    assert (np.abs(counts - n * probs) <= 3 * sd).all()


# ---------------------------------------------------------------------------
# generation


def test_generated_slates_are_valid(tiny_list, tiny_pivot):
    rng = np.random.default_rng(0)
    for model in (tiny_list, tiny_pivot):
        c = model.ideal_constraints(users=np.array([0]), n=1)[0]
        s = generate_slate(model, c, rng)
        assert s.shape == (5,) and s.min() >= 0 and s.max() < model.bank.n_items


def test_generation_deterministic_given_seed(tiny_pivot):
    c = tiny_pivot.ideal_constraints(users=np.arange(3), n=3)
    a = generate_slates(tiny_pivot, c, np.random.default_rng(7))
    b = generate_slates(tiny_pivot, c, np.random.default_rng(7))
    np.testing.assert_array_equal(a, b)


def test_gt_pi_never_perturbs():
    model = PivotCvae(tiny_bank(n_items=40), variant="GT-PI", latent_dim=3, hidden=6,
                      rng=np.random.default_rng(1))
    assert not model.perturb_infer and not model.perturb_train
    c = model.ideal_constraints(users=np.zeros(50, int), n=50)
    z = np.random.default_rng(0).normal(size=(50, 3))
    np.testing.assert_array_equal(model.decode(z, c, np.random.default_rng(1)),
                                  model.decode(z, c, None, perturb=False))


def test_spi_variant_perturbs_only_pivot():
    model = PivotCvae(tiny_bank(n_items=40), variant="GT-SPI", latent_dim=3, hidden=6,
                      rng=np.random.default_rng(1))
    c = model.ideal_constraints(users=np.zeros(200, int), n=200)
    z = np.zeros((200, 3))
    out = model.decode(z, c, np.random.default_rng(2))
    assert len(np.unique(out[:, 0])) > 1
    # completion is deterministic given the pivot
    for p in np.unique(out[:, 0]):
        rows = out[out[:, 0] == p]
        assert (rows == rows[0]).all()


def test_generation_uses_conditional_prior(tiny_list, monkeypatch):
    p = tiny_list.params
    p["prior.W2"][:] = 0.0
    target = np.array([1.5, -2.0, 0.25])
    p["prior.b2"][:] = np.concatenate([target, np.full(3, -20.0)])

    def no_encoder(*a, **k):
        raise AssertionError("posterior used at inference")

    monkeypatch.setattr(tiny_list, "encode", no_encoder)
    monkeypatch.setattr(tiny_list, "_encode", no_encoder)
    c = tiny_list.ideal_constraints(users=np.zeros(5, int), n=5)
    _, z = generate_slates(tiny_list, c, np.random.default_rng(0), return_z=True)
    np.testing.assert_allclose(z, np.tile(target, (5, 1)), atol=1e-3)


def test_reconstruct_uses_posterior_mean(tiny_list):
    slates, c, _, _ = tiny_batch(tiny_list)
    a = reconstruct(tiny_list, slates, c)
    b = reconstruct(tiny_list, slates, c)
    np.testing.assert_array_equal(a, b)
    assert a.shape == slates.shape


def test_training_reduces_loss_and_is_deterministic():
    bank = tiny_bank(n_items=30, dim=4, n_users=3)
    rng = np.random.default_rng(0)
    d = Dataset(rng.integers(0, 3, 300), rng.integers(0, 30, (300, 5)),
                rng.integers(0, 2, (300, 5)), 30)
    cfg = CvaeConfig(latent_dim=4, hidden=16, beta=0.1, lr=3e-3, epochs=8, negatives=10)
    runs = []
    for _ in range(2):
        model = build_cvae("SGT-SPI", bank, cfg)
        log = train_cvae(model, d, cfg, np.random.default_rng(1))
        runs.append((model, log))
    ep = runs[0][1].epochs
    assert ep[-1]["recon"] < ep[0]["recon"]
    for k in runs[0][0].params:
        np.testing.assert_array_equal(runs[0][0].params[k], runs[1][0].params[k])


def test_enc_convergence_rule_stops_early():
    bank = tiny_bank(n_items=30)
    rng = np.random.default_rng(0)
    d = Dataset(rng.integers(0, 3, 64), rng.integers(0, 30, (64, 5)), rng.integers(0, 2, (64, 5)), 30)
    cfg = CvaeConfig(latent_dim=2, hidden=4, epochs=100, negatives=5)
    model = build_cvae("ListCVAE", bank, cfg)
    log = train_cvae(model, d, cfg, np.random.default_rng(0), enc_monitor=lambda: 2.0)
    assert log.stopped_early
    assert len(log.epochs) == 2 * cfg.enc_window + cfg.enc_patience - 1


def test_distinct_post_filter(tiny_list, tiny_pivot):
    for model in (tiny_list, tiny_pivot):
        c = model.ideal_constraints(users=np.zeros(300, int), n=300)
        z = np.random.default_rng(0).normal(size=(300, model.m)) * 3
        plain = model.decode(z, c, np.random.default_rng(1))
        model.distinct = True
        filtered = model.decode(z, c, np.random.default_rng(1))
        assert all(len(set(s)) == model.K for s in filtered)
        same = np.array([len(set(s)) == model.K for s in plain])
        np.testing.assert_array_equal(filtered[same], plain[same])
    assert any(len(set(s)) < 5 for s in plain)
