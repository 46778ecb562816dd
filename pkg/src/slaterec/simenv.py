"""User-response environments.

Three parameterised simulators built on a biased matrix-factorisation
interest model (``URM``), optionally with personalised positional bias
(``URM_P``) and an attention-driven multi-item relation term
(``URM_P_MR``), plus a response model learned from logged slates
(``Learned``). All of them answer the same questions: per-position click
probabilities, expected clicks, and sampled responses.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import numkit as nk
from .dataio import Dataset, balance_responses

KINDS = ("URM", "URM_P", "URM_P_MR", "Learned")


@dataclass
class SimConfig:
    n_items: int = 3000
    n_users: int = 1000
    emb_dim: int = 8
    pos_offsets: tuple = (0.2, 0.1, 0.0, -0.1, -0.2)
    pos_noise_std: float = math.sqrt(0.2)
    pos_weight: float = 1.0
    relation_weight: float = 0.0
    seed: int = 0
    kind: str = "URM_P_MR"
    vec_mean: float = 0.0
    vec_std: float = 1.0
    bias_mean: float = 0.0
    bias_std: float = 0.1
    global_bias: float = 0.0

    def __post_init__(self):
        self.pos_offsets = tuple(float(x) for x in self.pos_offsets)
        if min(self.n_items, self.n_users, self.emb_dim) <= 0:
            raise ValueError("n_items, n_users and emb_dim must be positive")
        if self.pos_noise_std < 0 or self.relation_weight < 0:
            raise ValueError("pos_noise_std and relation_weight must be non-negative")
        if self.kind not in KINDS[:3]:
            raise ValueError(f"unknown simulator kind {self.kind!r}")

    @property
    def slate_size(self) -> int:
        return len(self.pos_offsets)

    def to_text(self) -> str:
        out = []
        for k, v in asdict(self).items():
            if k == "pos_offsets":
                v = ",".join(repr(x) for x in v)
            out.append(f"{k}={v}\n")
        return "".join(out)

    @classmethod
    def from_text(cls, text: str) -> "SimConfig":
        types = {f.name: f.type for f in fields(cls)}
        kw = {}
        for line in text.splitlines():
            if "=" not in line:
                continue
            k, v = (s.strip() for s in line.split("=", 1))
            if k not in types:
                raise ValueError(f"unknown SimConfig key {k!r}")
            if k == "pos_offsets":
                kw[k] = tuple(float(x) for x in v.split(","))
            elif types[k] in ("int", int):
                kw[k] = int(v)
            elif types[k] in ("str", str):
                kw[k] = v
            else:
                kw[k] = float(v)
        return cls(**kw)


@dataclass
class LearnedNet:
    params: nk.Params
    n_items: int
    n_users: int  # 0 when trained without user ids
    slate_size: int
    emb_dim: int

    def forward(self, slates, users):
        p = self.params
        B = slates.shape[0]
        parts = [p["item_emb"][slates].reshape(B, -1)]
        if self.n_users:
            parts.append(p["user_emb"][np.maximum(users, 0)])
        x = np.concatenate(parts, axis=1)
        logits, cache = nk.mlp_forward(p, "tower", x)
        return logits, (x, cache)

    def loss(self, slates, users, responses):
        p = self.params
        logits, (x, cache) = self.forward(slates, users)
        B = slates.shape[0]
        losses, dlogits = nk.bce_with_logits(logits, responses)
        loss = losses.sum() / B
        grads: nk.Params = {}
        dx = nk.mlp_backward(p, "tower", cache, dlogits / B, grads)
        Kd = self.slate_size * self.emb_dim
        grads["item_emb"] = nk.gather_backward(p["item_emb"].shape, slates, dx[:, :Kd])
        if self.n_users:
            grads["user_emb"] = nk.gather_backward(p["user_emb"].shape, np.maximum(users, 0), dx[:, Kd:])
        return loss, grads


@dataclass
class Environment:
    kind: str
    config: SimConfig
    item_vecs: np.ndarray | None = None
    user_vecs: np.ndarray | None = None
    item_bias: np.ndarray | None = None
    user_bias: np.ndarray | None = None
    global_bias: float = 0.0
    per_user_pos_bias: np.ndarray | None = None
    learned_net: LearnedNet | None = None
    train_curve: list = field(default_factory=list)

    @property
    def n_items(self) -> int:
        return self.config.n_items

    @property
    def n_users(self) -> int:
        return self.config.n_users

    @property
    def slate_size(self) -> int:
        return self.config.slate_size


def build_environment(config: SimConfig) -> Environment:
    """Sample a simulator from ``config``; identical configs give identical environments."""
    rng = np.random.default_rng(config.seed)
    c = config
    item_vecs = rng.normal(c.vec_mean, c.vec_std, size=(c.n_items, c.emb_dim))
    user_vecs = rng.normal(c.vec_mean, c.vec_std, size=(c.n_users, c.emb_dim))
    item_bias = rng.normal(c.bias_mean, c.bias_std, size=c.n_items)
    user_bias = rng.normal(c.bias_mean, c.bias_std, size=c.n_users)
    offsets = np.asarray(c.pos_offsets)
    pos_bias = offsets + c.pos_noise_std * rng.standard_normal((c.n_users, len(offsets)))
    return Environment(kind=c.kind, config=c, item_vecs=item_vecs, user_vecs=user_vecs,
                       item_bias=item_bias, user_bias=user_bias, global_bias=c.global_bias,
                       per_user_pos_bias=pos_bias)


def _check_ids(env: Environment, slates, users):
    if slates.size and (slates.min() < 0 or slates.max() >= env.n_items):
        raise KeyError("item id outside the environment's universe")
    if env.kind != "Learned" or (env.learned_net and env.learned_net.n_users):
        if users.size and (users.min() < 0 or users.max() >= env.n_users):
            raise KeyError("user id outside the environment's universe")


def slate_interest(env: Environment, slates, users) -> np.ndarray:
    """Click probability of every slot: ``(B, K)`` for slates ``(B, K)`` and users ``(B,)``."""
    slates = np.atleast_2d(np.asarray(slates, dtype=np.int64))
    users = np.broadcast_to(np.asarray(users, dtype=np.int64), slates.shape[:1])
    _check_ids(env, slates, users)
    if env.kind == "Learned":
        logits, _ = env.learned_net.forward(slates, users)
        return nk.sigmoid(logits)
    cfg = env.config
    V = env.item_vecs[slates]             # (B, K, d)
    U = env.user_vecs[users]              # (B, d)
    score = np.einsum("bkd,bd->bk", V, U) + env.user_bias[users][:, None] \
        + env.item_bias[slates] + env.global_bias
    prob = nk.sigmoid(score)
    if env.kind == "URM":
        return prob
    prob = prob + cfg.pos_weight * env.per_user_pos_bias[users]
    if env.kind == "URM_P_MR" and cfg.relation_weight != 0.0:
        attn = nk.sigmoid(V.mean(axis=1) * U)                 # (B, d)
        prob = prob + cfg.relation_weight * np.einsum("bkd,bd->bk", V, attn)
    return np.clip(prob, 0.0, 1.0)


def interest(env: Environment, item: int, user: int, slate, position: int) -> float:
    """Click probability of ``item`` shown at 1-based ``position`` of ``slate``."""
    slate = np.asarray(slate, dtype=np.int64)
    if not 1 <= position <= len(slate):
        raise IndexError(f"position {position} outside 1..{len(slate)}")
    if slate[position - 1] != item:
        raise ValueError(f"item {item} is not at position {position} of the slate")
    return float(slate_interest(env, slate[None], np.array([user]))[0, position - 1])


def expected_clicks(env: Environment, slate, user) -> float | np.ndarray:
    """Sum of per-slot click probabilities; vectorised over a batch of slates."""
    slate = np.asarray(slate)
    out = slate_interest(env, slate, user).sum(axis=1)
    return float(out[0]) if slate.ndim == 1 else out


def sample_response(env: Environment, slate, user, rng: np.random.Generator) -> np.ndarray:
    """Independent Bernoulli click per slot; batched like :func:`expected_clicks`."""
    slate = np.asarray(slate)
    p = slate_interest(env, slate, user)
    r = (rng.random(p.shape) < p).astype(np.int64)
    return r[0] if slate.ndim == 1 else r


def random_slates(rng, n: int, n_items: int, K: int, allow_repeats: bool = False) -> np.ndarray:
    if allow_repeats:
        return rng.integers(0, n_items, size=(n, K))
    if K > n_items:
        raise ValueError("slate size exceeds the item universe")
    # argsort of uniform keys gives a uniform draw without replacement per row
    if n_items <= 64:
        return np.argsort(rng.random((n, n_items)), axis=1)[:, :K]
    out = rng.integers(0, n_items, size=(n, K))
    for _ in range(100):
        srt = np.sort(out, axis=1)
        bad = (srt[:, 1:] == srt[:, :-1]).any(axis=1)
        if not bad.any():
            break
        out[bad] = rng.integers(0, n_items, size=(int(bad.sum()), K))
    return out


def generate_dataset(env: Environment, n_slates: int, rng: np.random.Generator,
                     balance: bool = True, allow_repeats: bool = False) -> Dataset:
    """Uniform random users and slates, simulated responses, then response balancing."""
    K = env.slate_size
    if n_slates == 0:
        return Dataset.empty(env.n_items, K)
    users = rng.integers(0, env.n_users, size=n_slates)
    slates = random_slates(rng, n_slates, env.n_items, K, allow_repeats)
    resp = sample_response(env, slates, users, rng)
    d = Dataset(users, slates, resp, env.n_items, K)
    return balance_responses(d, rng) if balance else d


@dataclass
class ResponseModelConfig:
    emb_dim: int = 8
    hidden: int = 64
    lr: float = 3e-3
    weight_decay: float = 1e-4
    batch: int = 64
    epochs: int = 10
    seed: int = 0


def fit_response_model(train: Dataset, config: ResponseModelConfig | None = None,
                       n_users: int | None = None) -> Environment:
    """Train a slate-aware click model with per-slot binary cross entropy."""
    cfg = config or ResponseModelConfig()
    if len(train) == 0:
        raise ValueError("cannot fit a response model on an empty dataset")
    rng = np.random.default_rng(cfg.seed)
    K = train.slate_size
    if n_users is None:
        n_users = int(train.users.max()) + 1 if train.has_users else 0
    params: nk.Params = {"item_emb": rng.normal(0, 0.1, size=(train.n_items, cfg.emb_dim))}
    n_in = K * cfg.emb_dim
    if n_users:
        params["user_emb"] = rng.normal(0, 0.1, size=(n_users, cfg.emb_dim))
        n_in += cfg.emb_dim
    nk.init_mlp(params, "tower", rng, n_in, cfg.hidden, K)
    net = LearnedNet(params, train.n_items, n_users, K, cfg.emb_dim)
    opt = nk.AdamState(lr=cfg.lr, weight_decay=cfg.weight_decay)
    curve = []
    n = len(train)
    for _ in range(cfg.epochs):
        perm = rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch):
            idx = perm[start:start + cfg.batch]
            loss, grads = net.loss(train.slates[idx], train.users[idx], train.responses[idx])
            if not math.isfinite(loss):
                raise nk.TrainingError("response model loss diverged")
            nk.adam_step(opt, params, grads)
            total += loss * len(idx)
        curve.append(total / n)
    sim_cfg = SimConfig(n_items=train.n_items, n_users=max(n_users, 1), emb_dim=cfg.emb_dim,
                        pos_offsets=(0.0,) * K, seed=cfg.seed)
    return Environment(kind="Learned", config=sim_cfg, learned_net=net, train_curve=curve)


# ---------------------------------------------------------------------------
# persistence


def save_environment(env: Environment, path):
    path = Path(path)
    if env.kind == "Learned":
        nk.save_params(path, env.learned_net.params)
        extra = f"learned_n_users={env.learned_net.n_users}\n"
    else:
        nk.save_params(path, {
            "item_vecs": env.item_vecs, "user_vecs": env.user_vecs,
            "item_bias": env.item_bias, "user_bias": env.user_bias,
            "per_user_pos_bias": env.per_user_pos_bias,
            "global_bias": np.array([env.global_bias]),
        })
        extra = ""
    Path(str(path) + ".cfg").write_text(f"env_kind={env.kind}\n" + extra + env.config.to_text())


def load_environment(path) -> Environment:
    path = Path(path)
    lines = Path(str(path) + ".cfg").read_text().splitlines()
    kind = lines[0].split("=", 1)[1]
    params = nk.load_params(path)
    if kind == "Learned":
        n_users = int(lines[1].split("=", 1)[1])
        cfg = SimConfig.from_text("\n".join(lines[2:]))
        K = cfg.slate_size
        net = LearnedNet(params, cfg.n_items, n_users, K, params["item_emb"].shape[1])
        return Environment(kind="Learned", config=cfg, learned_net=net)
    cfg = SimConfig.from_text("\n".join(lines[1:]))
    return Environment(kind=kind, config=cfg, item_vecs=params["item_vecs"],
                       user_vecs=params["user_vecs"], item_bias=params["item_bias"],
                       user_bias=params["user_bias"], global_bias=float(params["global_bias"][0]),
                       per_user_pos_bias=params["per_user_pos_bias"])
