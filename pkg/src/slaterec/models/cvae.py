"""Conditional VAE slate generators.

``ListCvae`` decodes all K slots at once. ``PivotCvae`` splits the decoder
into a pivot network for slot 1 and a completion network for slots 2..K that
is fed the pivot item's embedding. The pivot may be resampled by similarity
at training time (``SGT-*``) and/or inference time (``*-SPI``).

Item and user embeddings come from a frozen :class:`EmbeddingBank`; only the
encoder, conditional prior and decoder towers are trained.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .. import numkit as nk
from ..dataio import Dataset, make_constraint
from .common import EmbeddingBank, nearest_items, nearest_items_distinct, similarity_sample

log = logging.getLogger(__name__)

VARIANTS = ("GT-PI", "SGT-PI", "GT-SPI", "SGT-SPI")


@dataclass
class CvaeConfig:
    latent_dim: int = 16
    hidden: int = 256
    beta: float = 1.0
    lr: float = 1e-4
    weight_decay: float = 1e-4
    batch: int = 64
    negatives: int = 100
    epochs: int = 10
    seed: int = 0
    temperature: float = 1.0
    # stop when the 5-epoch moving average of validation ENC gains < 0.5% three windows running
    enc_window: int = 5
    enc_min_gain: float = 0.005
    enc_patience: int = 3


class ListCvae:
    def __init__(self, bank: EmbeddingBank, slate_size: int = 5, latent_dim: int = 16,
                 hidden: int = 256, beta: float = 1.0, personalised: bool | None = None,
                 rng: np.random.Generator | None = None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.bank = bank
        self.K = slate_size
        self.m = latent_dim
        self.hidden = hidden
        # generated slates may repeat items; set to True to post-filter repeats
        self.distinct = False
        self.beta = float(beta)
        self.personalised = bank.user_table is not None if personalised is None else personalised
        d = bank.dim
        self.c_dim = self.K + 1 + (bank.user_table.shape[1] if self.personalised else 0)
        self.params: nk.Params = {}
        nk.init_mlp(self.params, "enc", rng, self.K * d + self.c_dim, hidden, 2 * latent_dim, 0.1)
        nk.init_mlp(self.params, "prior", rng, self.c_dim, hidden, 2 * latent_dim, 0.1)
        self._init_decoder(rng)

    def _init_decoder(self, rng):
        nk.init_mlp(self.params, "dec", rng, self.m + self.c_dim, self.hidden, self.K * self.bank.dim)

    # -- conditions -------------------------------------------------------

    def constraints(self, responses, users=None) -> np.ndarray:
        responses = np.atleast_2d(responses)
        if not self.personalised:
            return make_constraint(responses)
        users = np.broadcast_to(np.asarray(users), responses.shape[:1])
        return make_constraint(responses, self.bank.user_vectors(users))

    def ideal_constraints(self, users=None, n: int = 1) -> np.ndarray:
        ideal = np.ones((n, self.K), dtype=np.int64)
        return self.constraints(ideal, users if users is not None else None)

    # -- networks ---------------------------------------------------------

    def encode(self, slates, c) -> nk.GaussianParams:
        out, _ = self._encode(slates, c)
        return nk.GaussianParams.from_output(out)

    def _encode(self, slates, c):
        B = len(slates)
        x = np.concatenate([self.bank.item_table[slates].reshape(B, -1), c], axis=1)
        return nk.mlp_forward(self.params, "enc", x)

    def prior(self, c) -> nk.GaussianParams:
        out, _ = nk.mlp_forward(self.params, "prior", c)
        return nk.GaussianParams.from_output(out)

    def _decode_train(self, z, c, slates, pivot_items):
        out, cache = nk.mlp_forward(self.params, "dec", np.concatenate([z, c], axis=1))
        return out.reshape(len(z), self.K, -1), cache

    def _decode_backward(self, cache, dxhat, grads):
        dx = nk.mlp_backward(self.params, "dec", cache, dxhat.reshape(len(dxhat), -1), grads)
        return dx[:, :self.m]

    def decode(self, z, c, rng=None, perturb: bool = False) -> np.ndarray:
        """Slot embeddings ``(B, K, d)`` -> item ids ``(B, K)`` via nearest neighbour."""
        xhat, _ = self._decode_train(z, c, None, None)
        if self.distinct:
            return nearest_items_distinct(xhat, self.bank.item_table)
        return nearest_items(xhat, self.bank.item_table)


class PivotCvae(ListCvae):
    def __init__(self, bank: EmbeddingBank, variant: str = "GT-SPI", temperature: float = 1.0, **kw):
        if variant not in VARIANTS:
            raise ValueError(f"unknown Pivot-CVAE variant {variant!r}")
        self.variant = variant
        self.temperature = temperature
        super().__init__(bank, **kw)

    @property
    def perturb_train(self) -> bool:
        return self.variant.startswith("SGT")

    @property
    def perturb_infer(self) -> bool:
        return self.variant.endswith("SPI")

    def _init_decoder(self, rng):
        d = self.bank.dim
        nk.init_mlp(self.params, "pivot", rng, self.m + self.c_dim, self.hidden, d)
        nk.init_mlp(self.params, "comp", rng, d + self.m + self.c_dim, self.hidden, (self.K - 1) * d)

    def _pivot_latent(self, z, c):
        return nk.mlp_forward(self.params, "pivot", np.concatenate([z, c], axis=1))

    def _complete(self, pivot_items, z, c):
        x = np.concatenate([self.bank.item_table[pivot_items], z, c], axis=1)
        out, cache = nk.mlp_forward(self.params, "comp", x)
        return out.reshape(len(z), self.K - 1, -1), cache

    def _decode_train(self, z, c, slates, pivot_items):
        if pivot_items is None:
            pivot_items = slates[:, 0]
        x1, pcache = self._pivot_latent(z, c)
        rest, ccache = self._complete(pivot_items, z, c)
        return np.concatenate([x1[:, None, :], rest], axis=1), (pcache, ccache)

    def _decode_backward(self, cache, dxhat, grads):
        pcache, ccache = cache
        B, d = len(dxhat), self.bank.dim
        dx1 = nk.mlp_backward(self.params, "pivot", pcache, dxhat[:, 0], grads)
        dxc = nk.mlp_backward(self.params, "comp", ccache, dxhat[:, 1:].reshape(B, -1), grads)
        return dx1[:, :self.m] + dxc[:, d:d + self.m]

    def decode(self, z, c, rng=None, perturb: bool | None = None) -> np.ndarray:
        perturb = self.perturb_infer if perturb is None else perturb
        pivots = pivot_select(self, z, c, perturb, rng)
        rest, _ = self._complete(pivots, z, c)
        if self.distinct:
            tail = nearest_items_distinct(rest, self.bank.item_table, first=pivots)
        else:
            tail = nearest_items(rest, self.bank.item_table)
        return np.concatenate([pivots[:, None], tail], axis=1)


# ---------------------------------------------------------------------------
# loss


def _forward_backward(model: ListCvae, slates, c, noise, negatives, pivot_items=None,
                      need_grads: bool = True):
    p = model.params
    V = model.bank.item_table
    slates = np.asarray(slates, dtype=np.int64)
    B = len(slates)
    enc_out, enc_cache = model._encode(slates, c)
    pri_out, pri_cache = nk.mlp_forward(p, "prior", c)
    q = nk.GaussianParams.from_output(enc_out)
    pr = nk.GaussianParams.from_output(pri_out)
    z = nk.reparameterize(q, noise)
    xhat, dec_cache = model._decode_train(z, c, slates, pivot_items)
    tgt = V[slates]
    neg = V[negatives]
    t = np.einsum("bkd,bkd->bk", xhat, tgt)
    n = np.einsum("bkd,bkjd->bkj", xhat, neg)
    ce, dt, dn = nk.sampled_softmax_terms(t, n)
    kl_rows, (dmu_q, dlv_q, dmu_p, dlv_p) = nk.gaussian_kl_terms(q, pr)
    recon = float(ce.sum(axis=1).mean())
    kl = float(kl_rows.mean())
    loss = recon + model.beta * kl
    parts = {"recon": recon, "kl": kl}
    if not need_grads:
        return loss, parts, None
    grads: nk.Params = {}
    dxhat = (dt[..., None] * tgt + np.einsum("bkj,bkjd->bkd", dn, neg)) / B
    dz = model._decode_backward(dec_cache, dxhat, grads)
    scale = model.beta / B
    dmu_r, dlv_r = nk.reparameterize_backward(q, noise, dz)
    m = model.m
    d_enc = np.concatenate([dmu_q * scale + dmu_r,
                            (dlv_q * scale + dlv_r) * nk.clamp_mask(enc_out[:, m:])], axis=1)
    d_pri = np.concatenate([dmu_p * scale, dlv_p * scale * nk.clamp_mask(pri_out[:, m:])], axis=1)
    nk.mlp_backward(p, "enc", enc_cache, d_enc, grads)
    nk.mlp_backward(p, "prior", pri_cache, d_pri, grads)
    return loss, parts, grads


def cvae_loss(model: ListCvae, slates, c, noise, negatives, pivot_items=None):
    """``recon + beta * KL`` for a batch, averaged over slates.

    ``noise`` is the standard-normal draw for the reparameterised latent
    ``(B, m)``; ``negatives`` holds sampled item ids per slot ``(B, K, J)``.
    For a pivot model the completion network is fed ``pivot_items``
    (default: the ground-truth first item).
    """
    loss, parts, _ = _forward_backward(model, slates, c, noise, negatives, pivot_items, False)
    return loss, parts


def cvae_loss_grad(model: ListCvae, slates, c, noise, negatives, pivot_items=None):
    return _forward_backward(model, slates, c, noise, negatives, pivot_items, True)


# ---------------------------------------------------------------------------
# inference


def pivot_select(model: PivotCvae, z, c, perturb: bool, rng=None, temperature: float | None = None):
    """Pick the first item from the pivot network's latent.

    Without perturbation this is the dot-product argmax; with it the item is
    drawn from sigmoid-dot weights over the whole catalogue. Accepts a single
    latent (returns an int) or a batch.
    """
    single = np.ndim(z) == 1
    z2, c2 = np.atleast_2d(z), np.atleast_2d(c)
    x1, _ = model._pivot_latent(z2, c2)
    V = model.bank.item_table
    if perturb:
        if rng is None:
            raise ValueError("perturbed pivot selection needs an rng")
        T = model.temperature if temperature is None else temperature
        items = similarity_sample(x1, V, rng, T)
    else:
        items = nearest_items(x1, V)
    return int(items[0]) if single else items


def sample_prior_latent(model: ListCvae, c, rng) -> np.ndarray:
    pr = model.prior(c)
    return nk.reparameterize(pr, rng.standard_normal(pr.mean.shape))


def generate_slates(model: ListCvae, c, rng, return_z: bool = False):
    """Generate one slate per constraint row: z from the conditional prior, then decode."""
    c = np.atleast_2d(c)
    z = sample_prior_latent(model, c, rng)
    slates = model.decode(z, c, rng)
    return (slates, z) if return_z else slates


def generate_slate(model: ListCvae, c_star, rng) -> np.ndarray:
    return generate_slates(model, np.asarray(c_star)[None], rng)[0]


def reconstruct(model: ListCvae, slates, c) -> np.ndarray:
    """Encode with the posterior mean (no noise) and decode without perturbation."""
    z = model.encode(slates, c).mean
    return model.decode(z, c, None, perturb=False)


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainLog:
    epochs: list = field(default_factory=list)
    stopped_early: bool = False


def train_cvae(model: ListCvae, train: Dataset, config: CvaeConfig, rng: np.random.Generator,
               enc_monitor=None) -> TrainLog:
    """Mini-batch Adam on the CVAE objective.

    ``enc_monitor()``, when given, is called after each epoch and should return
    the validation ENC used by the convergence rule in ``config``.
    """
    opt = nk.AdamState(lr=config.lr, weight_decay=config.weight_decay)
    users = train.users if model.personalised else None
    c_all = model.constraints(train.responses, users)
    n, K = len(train), model.K
    V = model.bank.item_table
    out = TrainLog()
    encs: list[float] = []
    stale = 0
    for epoch in range(config.epochs):
        perm = rng.permutation(n)
        tot_r = tot_k = 0.0
        for start in range(0, n, config.batch):
            idx = perm[start:start + config.batch]
            s = train.slates[idx]
            noise = rng.standard_normal((len(idx), model.m))
            negs = rng.integers(0, model.bank.n_items, size=(len(idx), K, config.negatives))
            pivots = None
            if isinstance(model, PivotCvae) and model.perturb_train:
                pivots = similarity_sample(V[s[:, 0]], V, rng, model.temperature)
            loss, parts, grads = cvae_loss_grad(model, s, c_all[idx], noise, negs, pivots)
            if not math.isfinite(loss):
                raise nk.TrainingError(f"CVAE loss diverged at epoch {epoch}")
            nk.adam_step(opt, model.params, grads)
            tot_r += parts["recon"] * len(idx)
            tot_k += parts["kl"] * len(idx)
        rec = {"epoch": epoch, "recon": tot_r / n, "kl": tot_k / n}
        if enc_monitor is not None:
            encs.append(float(enc_monitor()))
            rec["val_enc"] = encs[-1]
            w = config.enc_window
            if len(encs) >= 2 * w:
                prev = np.mean(encs[-2 * w:-w])
                cur = np.mean(encs[-w:])
                stale = stale + 1 if cur - prev < config.enc_min_gain * abs(prev) else 0
        out.epochs.append(rec)
        log.debug("epoch %d recon %.4f kl %.4f", epoch, rec["recon"], rec["kl"])
        if stale >= config.enc_patience:
            out.stopped_early = True
            break
    return out


def build_cvae(kind: str, bank: EmbeddingBank, config: CvaeConfig, slate_size: int = 5,
               personalised: bool | None = None):
    """``kind`` is ``"ListCVAE"`` or a Pivot-CVAE variant name such as ``"GT-SPI"``."""
    rng = np.random.default_rng(config.seed)
    kw = dict(slate_size=slate_size, latent_dim=config.latent_dim, hidden=config.hidden,
              beta=config.beta, personalised=personalised, rng=rng)
    if kind in ("ListCVAE", "List-CVAE"):
        return ListCvae(bank, **kw)
    variant = kind.replace("PivotCVAE-", "").replace("Pivot-CVAE-", "")
    return PivotCvae(bank, variant=variant, temperature=config.temperature, **kw)
