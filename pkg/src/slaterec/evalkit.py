"""Slate accuracy and variation metrics.

All metrics that depend on generated slates work on a :class:`SampleSet`,
i.e. ``N`` slates per evaluated user. Per-user values are averaged over users.
"""
from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import numkit as nk
from .dataio import Dataset
from .models.common import EmbeddingBank, similarity_sample
from .models.policies import FixedSlatePolicy, SlatePolicy
from .simenv import Environment, expected_clicks, slate_interest


@dataclass
class SampleSet:
    users: np.ndarray       # (U,), -1 for the universal user
    slates: np.ndarray      # (U, N, K)
    item_table: np.ndarray  # (|D|, d)

    def __post_init__(self):
        self.users = np.asarray(self.users, dtype=np.int64).reshape(-1)
        self.slates = np.asarray(self.slates, dtype=np.int64)
        if self.slates.ndim == 2:
            self.slates = self.slates[None]
        if self.slates.shape[0] != len(self.users):
            raise ValueError("one block of slates per user is required")

    @property
    def N(self) -> int:
        return self.slates.shape[1]

    @property
    def vectors(self) -> np.ndarray:
        return self.item_table[self.slates]


def sample_slates(policy: SlatePolicy, users, N: int, rng, bank: EmbeddingBank,
                  return_z: bool = False):
    """Draw ``N`` slates per user (a single one for deterministic policies)."""
    users = np.atleast_1d(np.asarray(users, dtype=np.int64))
    n = N if policy.stochastic else 1
    if return_z:
        slates, z = policy.sample(users, n, rng, return_z=True)
        return SampleSet(users, slates, bank.item_table), z
    return SampleSet(users, policy.sample(users, n, rng), bank.item_table)


# ---------------------------------------------------------------------------
# accuracy


def enc(source, env: Environment, users=None, N: int = 500, rng=None,
        bank: EmbeddingBank | None = None) -> float:
    """Expected number of clicks under ``env``.

    ``source`` is a :class:`SampleSet`, a :class:`SlatePolicy` or a single
    fixed slate. For every user the analytic expected clicks are averaged over
    that user's slates, then averaged over users.
    """
    if not isinstance(source, SampleSet):
        if not isinstance(source, SlatePolicy):
            source = FixedSlatePolicy(np.asarray(source))
        if users is None:
            users = np.arange(env.n_users)
        table = bank.item_table if bank is not None else np.zeros((env.n_items, 1))
        source = sample_slates(source, users, N, rng, EmbeddingBank(table))
    return float(np.mean(per_user_enc(source, env)))


def per_user_enc(samples: SampleSet, env: Environment) -> np.ndarray:
    U, n, K = samples.slates.shape
    users = np.repeat(np.maximum(samples.users, 0), n)
    ec = slate_interest(env, samples.slates.reshape(-1, K), users).sum(axis=1)
    return ec.reshape(U, n).mean(axis=1)


# ---------------------------------------------------------------------------
# variation


def _decompose(x: np.ndarray):
    # x: (N, K, d)
    N, K = x.shape[:2]
    mu = x.reshape(N * K, -1).mean(axis=0)
    mu_s = x.mean(axis=1)
    total = float(np.sum((x - mu) ** 2) / (N * K))
    slate_mean = float(np.sum((mu_s - mu) ** 2) / N)
    intra = float(np.sum((x - mu_s[:, None, :]) ** 2) / (N * K))
    return total, slate_mean, intra


def variance_decomposition(samples) -> tuple[float, float, float]:
    """``(total, slate_mean, intra_slate)`` item variance.

    ``samples`` is a :class:`SampleSet` (decomposed per user, then averaged)
    or an array of item vectors shaped ``(N, K, d)``.
    """
    if isinstance(samples, SampleSet):
        blocks = samples.vectors
    else:
        blocks = np.asarray(samples, dtype=float)[None]
    if blocks.size == 0 or blocks.shape[1] == 0:
        raise ValueError("variance of an empty sample set is undefined")
    parts = np.array([_decompose(b) for b in blocks])
    return tuple(float(v) for v in parts.mean(axis=0))


def coverage(samples: SampleSet, n_items: int) -> float:
    """Fraction of the catalogue seen across each user's ``N`` slates, averaged over users."""
    distinct = sum(np.unique(block).size for block in samples.slates)
    return distinct / (len(samples.slates) * n_items)


def ild(slate, bank: EmbeddingBank, normalized: bool = True) -> float:
    """One minus intra-list similarity (sigmoid of embedding dot products).

    By default the pairwise similarities are averaged over the ``K(K-1)``
    ordered pairs; ``normalized=False`` sums them instead.
    """
    return float(ild_batch(np.asarray(slate)[None], bank.item_table, normalized)[0])


def ild_batch(slates, item_table, normalized: bool = True) -> np.ndarray:
    V = item_table[np.asarray(slates)]
    K = V.shape[1]
    sim = nk.sigmoid(np.einsum("bkd,bld->bkl", V, V))
    off = sim.sum(axis=(1, 2)) - np.trace(sim, axis1=1, axis2=2)
    if normalized:
        off = off / (K * (K - 1))
    return 1.0 - off


# ---------------------------------------------------------------------------
# ranking metrics on held-out slates


def hit_and_recall(policy: SlatePolicy, test: Dataset, N: int, rng) -> tuple[float, float]:
    """Slate hit rate and recall against the positively-responded test items.

    Test slates without any positive response are skipped.
    """
    keep = test.responses.sum(axis=1) > 0
    if not keep.any():
        return 0.0, 0.0
    users = test.users[keep]
    gen = policy.sample(users, N if policy.stochastic else 1, rng)
    hits, recalls = [], []
    for block, s, r in zip(gen, test.slates[keep], test.responses[keep]):
        positives = np.unique(s[r > 0])
        for g in block:
            matched = np.isin(positives, g).sum()
            hits.append(float(matched > 0))
            recalls.append(matched / positives.size)
    return float(np.mean(hits)), float(np.mean(recalls))


# ---------------------------------------------------------------------------
# reports


@dataclass
class MetricsReport:
    model: str
    env: str
    beta: float
    seed: int
    N: int
    enc: float
    total_var: float
    slate_mean_var: float
    intra_slate_var: float
    coverage: float
    ild_mean: float
    ild_std: float
    ild_min: float
    ild_median: float
    ild_max: float
    hit_rate: float = float("nan")
    recall: float = float("nan")


def evaluate(policy: SlatePolicy, env: Environment, bank: EmbeddingBank, users, N: int,
             rng, *, test: Dataset | None = None, env_name: str = "", beta: float = float("nan"),
             seed: int = 0, samples: SampleSet | None = None) -> MetricsReport:
    samples = samples or sample_slates(policy, users, N, rng, bank)
    total, smean, intra = variance_decomposition(samples)
    ilds = ild_batch(samples.slates.reshape(-1, samples.slates.shape[-1]), bank.item_table)
    hit = rec = float("nan")
    if test is not None and len(test):
        hit, rec = hit_and_recall(policy, test, N, rng)
    return MetricsReport(
        model=policy.name, env=env_name, beta=beta, seed=seed, N=N,
        enc=float(np.mean(per_user_enc(samples, env))),
        total_var=total, slate_mean_var=smean, intra_slate_var=intra,
        coverage=coverage(samples, bank.n_items),
        ild_mean=float(ilds.mean()), ild_std=float(ilds.std()), ild_min=float(ilds.min()),
        ild_median=float(np.median(ilds)), ild_max=float(ilds.max()),
        hit_rate=hit, recall=rec)


def _fmt(v):
    if isinstance(v, float):
        return "nan" if math.isnan(v) else f"{v:.10g}"
    return str(v)


REPORT_FIELDS = [f for f in MetricsReport.__dataclass_fields__]


def write_reports(reports, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(REPORT_FIELDS)
        for r in reports:
            w.writerow([_fmt(v) for v in asdict(r).values()])


# ---------------------------------------------------------------------------
# post-generation perturbation study


@dataclass
class PerturbationStudy:
    a_values: list
    bins: np.ndarray
    # (group, a) -> expected clicks of the perturbed slates
    values: dict = field(default_factory=dict)
    # a -> mean |ENC_perturbed - ENC_original|
    mean_abs_shift: dict = field(default_factory=dict)

    def table(self):
        rows = []
        for (g, a), vals in sorted(self.values.items()):
            counts, _ = np.histogram(vals, bins=self.bins)
            for lo, hi, c in zip(self.bins[:-1], self.bins[1:], counts):
                rows.append((g, a, float(lo), float(hi), int(c)))
        return rows

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["group", "a", "bin_low", "bin_high", "count"])
            for g, a, lo, hi, c in self.table():
                w.writerow([g, a, _fmt(lo), _fmt(hi), c])


def perturb_positions(slates, a: int, item_table, rng, temperature: float = 1.0) -> np.ndarray:
    """Replace ``a`` random slots of every slate by similarity-weighted draws."""
    out = np.array(slates, dtype=np.int64)
    B, K = out.shape
    if a == 0:
        return out
    cols = np.argsort(rng.random((B, K)), axis=1)[:, :a]
    rows = np.repeat(np.arange(B), a)
    cols = cols.reshape(-1)
    out[rows, cols] = similarity_sample(item_table[out[rows, cols]], item_table, rng, temperature)
    return out


def perturbation_study(d: Dataset, env: Environment, a_values, rng, *,
                       item_table=None, n_trials: int | None = None, groups=None,
                       n_bins: int | None = None) -> PerturbationStudy:
    """Expected-click distribution of logged slates after perturbing ``a`` items.

    ``n_trials`` records are drawn (with replacement) per click group; by
    default every record is used once.
    """
    K = d.slate_size
    if any(not 0 <= a <= K for a in a_values):
        raise ValueError(f"a values must lie in 0..{K}")
    table = item_table if item_table is not None else env.item_vecs
    bins = np.linspace(0.0, K, (n_bins or 4 * K) + 1)
    study = PerturbationStudy(list(a_values), bins)
    clicks = d.clicks
    shifts = {a: [] for a in a_values}
    for g in groups if groups is not None else range(K + 1):
        idx = np.flatnonzero(clicks == g)
        if idx.size == 0:
            continue
        if n_trials is not None:
            idx = rng.choice(idx, size=n_trials, replace=True)
        slates, users = d.slates[idx], np.maximum(d.users[idx], 0)
        base = expected_clicks(env, slates, users)
        for a in a_values:
            vals = expected_clicks(env, perturb_positions(slates, a, table, rng), users)
            study.values[(g, a)] = vals
            shifts[a].append(np.abs(vals - base))
    study.mean_abs_shift = {a: float(np.mean(np.concatenate(v))) for a, v in shifts.items() if v}
    return study
