"""Experiment plumbing: config files, the end-to-end pipeline, beta sweeps and scans.

A config is an INI file with the sections ``[sim] [data] [model] [train]
[eval] [sweep]``; every key is optional and falls back to the desk-scale
defaults below. All randomness derives from the single ``seed`` through
fixed per-stage streams, so two runs with the same config and seed write
byte-identical metric CSVs.
"""
from __future__ import annotations

import configparser
import csv
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import __version__
from . import evalkit as ev
from . import numkit as nk
from .dataio import (Dataset, balance_responses, read_dataset, read_ratings, remap_ids,
                     read_manifest, sessions_to_slates, split_dataset, write_dataset, write_manifest)
from .models import (CvaeConfig, CvaePolicy, EmbeddingBank, PointwiseRanker, RankerConfig,
                     RankerPolicy, UniformRandomPolicy, build_cvae, pretrain_embeddings, reconstruct,
                     train_cvae, train_pointwise_ranker)
from .models.cvae import ListCvae
from .simenv import (Environment, ResponseModelConfig, SimConfig, build_environment,
                     expected_clicks, fit_response_model, generate_dataset)

log = logging.getLogger(__name__)

CVAE_KINDS = ("ListCVAE", "GT-PI", "SGT-PI", "GT-SPI", "SGT-SPI")
RANKER_KINDS = ("MF", "NeuMF")

# per-stage substreams of the master seed
_DATA, _TRAIN, _EVAL, _RESP = range(4)


class ConfigError(ValueError):
    pass


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException, manifest: "RunManifest | None" = None):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.manifest = manifest


# ---------------------------------------------------------------------------
# configuration


@dataclass
class DataSection:
    source: str = "sim"            # "sim", "ratings" or "dataset"
    path: str = ""
    n_slates: int = 10_000
    balance: bool = True
    allow_repeats: bool = False
    positive_threshold: int = 4
    fractions: tuple = (0.8, 0.1, 0.1)


@dataclass
class ModelSection:
    kinds: tuple = ("ListCVAE",)
    embeddings: str = "explicit"   # "explicit" (simulator vectors) or "pretrain"
    latent_dim: int = 16
    hidden: int = 256
    beta: float = 1.0
    temperature: float = 1.0
    mmr_lambda: float = 0.5
    mmr_classic: bool = False
    distinct_items: bool = False
    ranker_hidden: int = 256
    emb_dim: int = 8


@dataclass
class TrainSection:
    lr: float = 1e-4
    weight_decay: float = 1e-4
    batch: int = 64
    negatives: int = 100
    epochs: int = 10
    ranker_lr: float = 3e-4
    ranker_epochs: int = 20
    response_epochs: int = 10
    enc_stopping: bool = False


@dataclass
class EvalSection:
    N: int = 500
    n_users: int = 0               # 0 = every user of the environment
    hit_recall: bool = True


def default_beta_grid() -> list[float]:
    coarse = np.logspace(math.log10(1e-5), math.log10(30.0), 13)
    coarse[0], coarse[-1] = 1e-5, 30.0
    fine = np.logspace(-3, -2, 5)
    return sorted({float(b) for b in np.concatenate([coarse, fine])})


@dataclass
class SweepSpec:
    beta_values: tuple = field(default_factory=lambda: tuple(default_beta_grid()))
    kinds: tuple = ("ListCVAE",)
    replicates: int = 3
    dump_z: bool = True

    def __post_init__(self):
        self.beta_values = tuple(float(b) for b in self.beta_values)
        self.kinds = tuple(self.kinds)
        if not self.beta_values or any(not b > 0 for b in self.beta_values):
            raise ConfigError("sweep betas must be positive")
        if self.replicates < 1:
            raise ConfigError("sweep replicates must be >= 1")


@dataclass
class PipelineConfig:
    seed: int = 0
    sim: SimConfig = field(default_factory=lambda: SimConfig(n_items=300, n_users=100,
                                                             relation_weight=0.5))
    data: DataSection = field(default_factory=DataSection)
    model: ModelSection = field(default_factory=ModelSection)
    train: TrainSection = field(default_factory=TrainSection)
    eval: EvalSection = field(default_factory=EvalSection)
    sweep: SweepSpec = field(default_factory=SweepSpec)

    def cvae_config(self, beta: float | None = None, seed: int | None = None) -> CvaeConfig:
        m, t = self.model, self.train
        return CvaeConfig(latent_dim=m.latent_dim, hidden=m.hidden,
                          beta=m.beta if beta is None else beta, lr=t.lr,
                          weight_decay=t.weight_decay, batch=t.batch, negatives=t.negatives,
                          epochs=t.epochs, seed=self.seed if seed is None else seed,
                          temperature=m.temperature)

    def ranker_config(self) -> RankerConfig:
        return RankerConfig(emb_dim=self.model.emb_dim, hidden=self.model.ranker_hidden,
                            lr=self.train.ranker_lr, weight_decay=self.train.weight_decay,
                            batch=self.train.batch, epochs=self.train.ranker_epochs,
                            seed=self.seed)

    def to_text(self) -> str:
        cp = configparser.ConfigParser()
        cp.optionxform = str
        cp["run"] = {"seed": str(self.seed)}
        for name in ("sim", "data", "model", "train", "eval", "sweep"):
            cp[name] = {k: _unparse(v) for k, v in asdict(getattr(self, name)).items()}
        lines = []
        for sec in cp.sections():
            lines.append(f"[{sec}]")
            lines.extend(f"{k} = {v}" for k, v in cp[sec].items())
            lines.append("")
        return "\n".join(lines)


def _unparse(v) -> str:
    if isinstance(v, (tuple, list)):
        return ",".join(_unparse(x) for x in v)
    return repr(v) if isinstance(v, float) else str(v)


def _parse_value(raw: str, current, key: str):
    raw = raw.strip()
    try:
        if isinstance(current, bool):
            low = raw.lower()
            if low not in ("1", "0", "true", "false", "yes", "no", "on", "off"):
                raise ValueError(raw)
            return low in ("1", "true", "yes", "on")
        if isinstance(current, int):
            return int(raw)
        if isinstance(current, float):
            return float(raw)
        if isinstance(current, tuple):
            items = [s.strip() for s in raw.split(",") if s.strip()]
            sample = current[0] if current else ""
            if isinstance(sample, (int, float)) and not isinstance(sample, bool):
                return tuple(float(s) for s in items)
            return tuple(items)
        return raw
    except ValueError:
        raise ConfigError(f"bad value for {key!r}: {raw!r}") from None


def _apply(section_obj, entries: dict, section: str):
    known = {f.name for f in fields(section_obj)}
    updates = {}
    for k, raw in entries.items():
        if k not in known:
            raise ConfigError(f"unknown key {k!r} in [{section}]")
        updates[k] = _parse_value(raw, getattr(section_obj, k), f"{section}.{k}")
    try:
        return replace(section_obj, **updates)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"[{section}]: {exc}") from None


def parse_config(text: str, seed: int | None = None) -> PipelineConfig:
    """Parse INI text into a :class:`PipelineConfig`; unknown sections or keys are errors."""
    cp = configparser.ConfigParser()
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from None
    cfg = PipelineConfig()
    for sec in cp.sections():
        entries = dict(cp[sec])
        if sec == "run":
            if set(entries) - {"seed"}:
                raise ConfigError(f"unknown key in [run]: {sorted(set(entries) - {'seed'})}")
            if "seed" in entries:
                cfg.seed = _parse_value(entries["seed"], 0, "run.seed")
        elif sec in ("sim", "data", "model", "train", "eval", "sweep"):
            setattr(cfg, sec, _apply(getattr(cfg, sec), entries, sec))
        else:
            raise ConfigError(f"unknown section [{sec}]")
    if seed is not None:
        cfg.seed = int(seed)
    _validate(cfg)
    return cfg


def load_config(path, seed: int | None = None) -> PipelineConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text, seed)


def _validate(cfg: PipelineConfig):
    if cfg.data.source not in ("sim", "ratings", "dataset"):
        raise ConfigError(f"data.source must be sim, ratings or dataset, got {cfg.data.source!r}")
    if cfg.data.source != "sim" and not cfg.data.path:
        raise ConfigError("data.path is required for non-simulated data")
    if cfg.model.embeddings not in ("explicit", "pretrain"):
        raise ConfigError("model.embeddings must be explicit or pretrain")
    if cfg.data.source != "sim" and cfg.model.embeddings == "explicit":
        raise ConfigError("explicit embeddings are only available for simulated data")
    fr = cfg.data.fractions
    if len(fr) != 3 or min(fr) < 0 or not math.isclose(sum(fr), 1.0):
        raise ConfigError(f"data.fractions must be three non-negatives summing to 1, got {fr}")
    for kind in cfg.model.kinds:
        try:
            _split_kind(kind)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
    if cfg.eval.N < 1:
        raise ConfigError("eval.N must be >= 1")


def _split_kind(kind: str):
    """``"NonGreedy-MF-MMR"`` -> (base, nongreedy, mmr)."""
    nongreedy = kind.startswith("NonGreedy-")
    base = kind[len("NonGreedy-"):] if nongreedy else kind
    mmr = base.endswith("-MMR")
    base = base[:-4] if mmr else base
    base = base.replace("PivotCVAE-", "").replace("Pivot-CVAE-", "")
    if base == "Random" and not (nongreedy or mmr):
        return base, False, False
    if base in RANKER_KINDS or (base in CVAE_KINDS and not mmr):
        return base, nongreedy, mmr
    raise ValueError(f"unknown model kind {kind!r}")


# ---------------------------------------------------------------------------
# manifest


@dataclass
class RunManifest:
    command: str
    config_text: str
    seed: int
    version: str = __version__
    outputs: dict = field(default_factory=dict)
    split_sizes: tuple = ()
    wall_clock: float = 0.0
    failed_stage: str = ""

    def write(self, path):
        entries = {"command": self.command, "seed": self.seed, "version": self.version,
                   "split_sizes": "/".join(map(str, self.split_sizes)),
                   "wall_clock_s": f"{self.wall_clock:.3f}", "failed_stage": self.failed_stage}
        entries.update({f"output.{k}": v for k, v in sorted(self.outputs.items())})
        write_manifest(path, entries)
        Path(str(path) + ".config").write_text(self.config_text)


def _stream(seed: int, *keys: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, *keys]))


# ---------------------------------------------------------------------------
# stages


@dataclass
class Prepared:
    env: Environment
    data: Dataset
    train: Dataset
    val: Dataset
    test: Dataset
    bank: EmbeddingBank


def stage_environment(cfg: PipelineConfig) -> Environment | None:
    if cfg.data.source != "sim":
        return None
    return build_environment(cfg.sim)


def stage_dataset(cfg: PipelineConfig, env: Environment | None) -> Dataset:
    if cfg.data.source == "sim":
        return generate_dataset(env, cfg.data.n_slates, _stream(cfg.seed, _DATA),
                                balance=False, allow_repeats=cfg.data.allow_repeats)
    if cfg.data.source == "dataset":
        return read_dataset(cfg.data.path)
    rows, _, _ = remap_ids(read_ratings(cfg.data.path))
    return sessions_to_slates(rows, K=cfg.sim.slate_size,
                              positive_threshold=cfg.data.positive_threshold)


def prepare(cfg: PipelineConfig, manifest: RunManifest | None = None) -> Prepared:
    """Environment, balanced data, split and embedding bank shared by all models."""
    stage = "environment"
    try:
        env = stage_environment(cfg)
        stage = "dataset"
        data = stage_dataset(cfg, env)
        if cfg.data.balance:
            data = balance_responses(data, _stream(cfg.seed, _DATA, 1))
        stage = "split"
        train, val, test = split_dataset(data, cfg.data.fractions, seed=cfg.seed)
        log.info("split sizes %d/%d/%d", len(train), len(val), len(test))
        if manifest is not None:
            manifest.split_sizes = (len(train), len(val), len(test))
        if env is None:
            stage = "response-model"
            env = fit_response_model(train, ResponseModelConfig(
                emb_dim=cfg.model.emb_dim, epochs=cfg.train.response_epochs,
                seed=int(_stream(cfg.seed, _RESP).integers(2**31))))
        stage = "embeddings"
        if cfg.model.embeddings == "explicit":
            bank = pretrain_embeddings(train, env=env, explicit=True)
        else:
            bank = pretrain_embeddings(train, cfg.ranker_config(), n_users=_n_users(data, env))
    except StageError:
        raise
    except Exception as exc:
        raise StageError(stage, exc, manifest) from exc
    return Prepared(env, data, train, val, test, bank)


def _n_users(data: Dataset, env: Environment | None) -> int | None:
    if env is not None and env.kind != "Learned":
        return env.n_users
    return int(data.users.max()) + 1 if data.has_users else None


def _eval_users(cfg: PipelineConfig, env: Environment, bank: EmbeddingBank) -> np.ndarray:
    if bank.user_table is None:
        return np.array([-1])
    n = bank.user_table.shape[0]
    return np.arange(min(cfg.eval.n_users, n) if cfg.eval.n_users else n)


def build_policy(kind: str, cfg: PipelineConfig, prep: Prepared, *, beta: float | None = None,
                 seed: int | None = None, train_rng=None):
    """Train the model behind ``kind`` and wrap it as a slate policy."""
    base, nongreedy, mmr = _split_kind(kind)
    seed = cfg.seed if seed is None else seed
    if base == "Random":
        return UniformRandomPolicy(prep.bank.n_items, prep.env.slate_size), None
    if base in RANKER_KINDS:
        rcfg = replace(cfg.ranker_config(), seed=seed)
        ranker = train_pointwise_ranker(base, prep.train, rcfg, val=prep.val if len(prep.val) else None,
                                        n_users=_n_users(prep.data, prep.env))
        pol = RankerPolicy(ranker, prep.bank, prep.env.slate_size, nongreedy=nongreedy,
                           mmr_lambda=cfg.model.mmr_lambda if mmr else None,
                           mmr_classic=cfg.model.mmr_classic, temperature=cfg.model.temperature)
        return pol, None
    ccfg = cfg.cvae_config(beta, seed)
    model = build_cvae(base, prep.bank, ccfg, prep.env.slate_size)
    model.distinct = cfg.model.distinct_items
    rng = train_rng if train_rng is not None else _stream(seed, _TRAIN)
    monitor = None
    if cfg.train.enc_stopping:
        mon_users = _eval_users(cfg, prep.env, prep.bank)[:20]
        mon_rng = _stream(seed, _TRAIN, 1)
        monitor = lambda: ev.enc(CvaePolicy(model), prep.env, mon_users, 50, mon_rng, prep.bank)
    train_cvae(model, prep.train, ccfg, rng, enc_monitor=monitor)
    return CvaePolicy(model, nongreedy=nongreedy, temperature=cfg.model.temperature), model


def save_model(path, kind: str, policy) -> bool:
    """Checkpoint the trainable part of ``policy``; returns False if it has none."""
    if isinstance(policy, CvaePolicy):
        nk.save_params(path, policy.model.params)
        meta = {"kind": kind, "beta": repr(policy.model.beta),
                "personalised": int(policy.model.personalised)}
    elif isinstance(policy, RankerPolicy):
        nk.save_params(path, policy.ranker.params)
        meta = {"kind": kind, "personalised": int(policy.ranker.personalised)}
    else:
        return False
    write_manifest(str(path) + ".meta", meta)
    return True


def load_model(path, cfg: PipelineConfig, prep: Prepared):
    """Inverse of :func:`save_model`; returns ``(policy, cvae_or_None, kind)``."""
    meta = read_manifest(str(path) + ".meta")
    kind = meta["kind"]
    base, nongreedy, mmr = _split_kind(kind)
    params = nk.load_params(path)
    personalised = bool(int(meta["personalised"]))
    if base in RANKER_KINDS:
        ranker = PointwiseRanker(base, params, prep.bank.n_items, personalised)
        pol = RankerPolicy(ranker, prep.bank, prep.env.slate_size, nongreedy=nongreedy,
                           mmr_lambda=cfg.model.mmr_lambda if mmr else None,
                           mmr_classic=cfg.model.mmr_classic, temperature=cfg.model.temperature)
        return pol, None, kind
    model = build_cvae(base, prep.bank, cfg.cvae_config(float(meta["beta"])),
                       prep.env.slate_size, personalised)
    if set(params) != set(model.params) or any(params[k].shape != model.params[k].shape
                                                for k in params):
        raise ConfigError(f"{path}: checkpoint does not match the configured architecture")
    model.params = params
    model.distinct = cfg.model.distinct_items
    return CvaePolicy(model, nongreedy=nongreedy, temperature=cfg.model.temperature), model, kind


def run_pipeline(cfg: PipelineConfig, out_dir, command: str = "pipeline") -> RunManifest:
    """Simulate or ingest, balance, split, embed, train every model kind, evaluate, report.

    Writes ``metrics.csv`` (one row per model kind) and ``manifest.txt`` into
    ``out_dir``. A failing stage raises :class:`StageError` after the manifest
    of partial outputs has been written.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    start = time.perf_counter()
    manifest = RunManifest(command, cfg.to_text(), cfg.seed)
    try:
        prep = prepare(cfg, manifest)
        data_path = out / "dataset.tsv"
        write_dataset(prep.data, data_path)
        manifest.outputs["dataset"] = str(data_path)
        reports = []
        env_name = prep.env.kind
        for i, kind in enumerate(cfg.model.kinds):
            stage = f"train:{kind}"
            try:
                pol, model = build_policy(kind, cfg, prep)
                stage = f"eval:{kind}"
                users = _eval_users(cfg, prep.env, prep.bank)
                rng = _stream(cfg.seed, _EVAL, i)
                beta = model.beta if model is not None else float("nan")
                test = prep.test if cfg.eval.hit_recall else None
                reports.append(ev.evaluate(pol, prep.env, prep.bank, users, cfg.eval.N, rng,
                                           test=test, env_name=env_name, beta=beta, seed=cfg.seed))
                ckpt = out / f"model-{kind}.bin"
                if save_model(ckpt, kind, pol):
                    manifest.outputs[f"model.{kind}"] = str(ckpt)
            except Exception as exc:
                raise StageError(stage, exc, manifest) from exc
        metrics = out / "metrics.csv"
        ev.write_reports(reports, metrics)
        manifest.outputs["metrics"] = str(metrics)
    except StageError as exc:
        manifest.failed_stage = exc.stage
        manifest.wall_clock = time.perf_counter() - start
        manifest.write(out / "manifest.txt")
        raise
    manifest.wall_clock = time.perf_counter() - start
    manifest.write(out / "manifest.txt")
    return manifest


# ---------------------------------------------------------------------------
# beta sweep

SWEEP_FIELDS = ["seed", "beta", "replicate", "model", "N", "metric", "value"]
SWEEP_METRICS = ["enc", "total_var", "slate_mean_var", "intra_slate_var", "coverage",
                 "ild_mean", "ild_std", "hit_rate", "recall"]


@dataclass
class SweepReport:
    rows: list = field(default_factory=list)       # long-format tuples, SWEEP_FIELDS order
    failures: list = field(default_factory=list)   # (beta, replicate, model, message)
    z_dumps: dict = field(default_factory=dict)    # (beta, replicate, model) -> path

    @property
    def n_cells(self) -> int:
        return len({(r[1], r[2], r[3]) for r in self.rows})


def _sweep_cell(cfg: PipelineConfig, prep: Prepared, kind: str, beta: float, beta_idx: int,
                rep: int, out_dir: str | None, dump_z: bool):
    ss = np.random.SeedSequence([cfg.seed, beta_idx, rep])
    train_ss, eval_ss = ss.spawn(2)
    model_seed = int(ss.generate_state(1)[0])
    pol, model = build_policy(kind, cfg, prep, beta=beta, seed=model_seed,
                              train_rng=np.random.default_rng(train_ss))
    users = _eval_users(cfg, prep.env, prep.bank)
    rng = np.random.default_rng(eval_ss)
    if isinstance(pol, CvaePolicy):
        samples, z = ev.sample_slates(pol, users, cfg.eval.N, rng, prep.bank, return_z=True)
    else:
        samples, z = ev.sample_slates(pol, users, cfg.eval.N, rng, prep.bank), None
    test = prep.test if cfg.eval.hit_recall else None
    rep_ = ev.evaluate(pol, prep.env, prep.bank, users, cfg.eval.N, rng, test=test,
                       beta=beta, seed=cfg.seed, samples=samples)
    z_path = None
    if dump_z and out_dir is not None and z is not None:
        z_path = os.path.join(out_dir, f"z-{kind}-beta{beta:.6g}-rep{rep}.txt")
        write_z_dump(z_path, samples, z)
    return rep_, z_path


def run_beta_sweep(spec: SweepSpec, cfg: PipelineConfig, out_dir=None, workers: int = 1,
                   prep: Prepared | None = None) -> SweepReport:
    """Train and evaluate one model per (kind, beta, replicate).

    Betas are processed and reported in ascending order. Cell ``(i, r)`` with
    ``i`` the index of beta in that order draws all randomness from
    ``SeedSequence([seed, i, r])``, so results do not depend on worker count.
    Failed cells are recorded in ``failures`` and the sweep carries on.
    """
    prep = prep or prepare(cfg)
    betas = sorted(spec.beta_values)
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
    cells = [(kind, b, i, r) for i, b in enumerate(betas) for r in range(spec.replicates)
             for kind in spec.kinds]
    out_s = None if out_dir is None else str(out_dir)
    results = {}
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futs = {cell: pool.submit(_sweep_cell, cfg, prep, cell[0], cell[1], cell[2], cell[3],
                                      out_s, spec.dump_z) for cell in cells}
            for cell, fut in futs.items():
                try:
                    results[cell] = fut.result()
                except Exception as exc:  # noqa: BLE001 - recorded, sweep continues
                    results[cell] = exc
    else:
        for cell in cells:
            try:
                results[cell] = _sweep_cell(cfg, prep, *cell, out_s, spec.dump_z)
            except Exception as exc:  # noqa: BLE001
                results[cell] = exc
    report = SweepReport()
    for kind, b, i, r in cells:
        res = results[(kind, b, i, r)]
        if isinstance(res, Exception):
            log.warning("sweep cell beta=%g rep=%d %s failed: %s", b, r, kind, res)
            report.failures.append((b, r, kind, f"{type(res).__name__}: {res}"))
            continue
        metrics, z_path = res
        for name in SWEEP_METRICS:
            report.rows.append((cfg.seed, b, r, kind, cfg.eval.N, name, getattr(metrics, name)))
        if z_path:
            report.z_dumps[(b, r, kind)] = z_path
    if out_dir is not None:
        write_sweep_csv(report, Path(out_dir) / "sweep.csv")
        if report.failures:
            with open(Path(out_dir) / "sweep_failures.csv", "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["beta", "replicate", "model", "error"])
                w.writerows(report.failures)
    return report


def write_sweep_csv(report: SweepReport, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SWEEP_FIELDS)
        for row in report.rows:
            w.writerow([ev._fmt(v) if isinstance(v, float) else v for v in row])


def write_z_dump(path, samples: ev.SampleSet, z: np.ndarray):
    """Generated slates in the dataset line format plus a ``.vec`` float sidecar of latents."""
    U, n, K = samples.slates.shape
    users = np.repeat(samples.users, n)
    resp = np.ones((U * n, K), dtype=np.int64)
    d = Dataset(users, samples.slates.reshape(-1, K), resp, samples.item_table.shape[0], K)
    write_dataset(d, path)
    np.savetxt(str(path) + ".vec", np.asarray(z).reshape(U * n, -1), fmt="%.10g", delimiter="\t")


# ---------------------------------------------------------------------------
# reconstruction scan

SCAN_FIELDS = ["seed", "beta", "model", "N", "clicks", "enc_original", "enc_reconstructed"]


def emit_reconstruction_scan(model: ListCvae, dataset: Dataset, env: Environment, path=None, *,
                             seed: int = 0, kind: str | None = None):
    """Posterior-mean reconstruction of every slate, scored under ``env``.

    Returns rows ``(seed, beta, model, N, clicks, enc_original, enc_reconstructed)``
    (N is 1: one reconstruction per slate) and writes them as CSV when
    ``path`` is given.
    """
    users = dataset.users if model.personalised else None
    c = model.constraints(dataset.responses, users)
    rec = reconstruct(model, dataset.slates, c)
    env_users = np.maximum(dataset.users, 0)
    orig = expected_clicks(env, dataset.slates, env_users) if len(dataset) else np.zeros(0)
    new = expected_clicks(env, rec, env_users) if len(dataset) else np.zeros(0)
    name = kind or (f"PivotCVAE-{model.variant}" if hasattr(model, "variant") else "ListCVAE")
    rows = [(seed, model.beta, name, 1, int(k), float(a), float(b))
            for k, a, b in zip(dataset.clicks, orig, new)]
    if path is not None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(SCAN_FIELDS)
            for row in rows:
                w.writerow([ev._fmt(v) if isinstance(v, float) else v for v in row])
    return rows
