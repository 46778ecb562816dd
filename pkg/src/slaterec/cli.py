"""Command-line front door.

Every subcommand reads the same INI config (``--config``), derives all
randomness from ``--seed`` and writes into ``--out``. Exit status is 0 on
success, 2 for configuration errors and 3 when a pipeline stage fails.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import evalkit as ev
from . import pipeline as pl
from .dataio import read_ratings, remap_ids, sessions_to_slates, write_dataset
from .simenv import build_environment, save_environment

log = logging.getLogger("slaterec")

EXIT_OK, EXIT_CONFIG, EXIT_STAGE = 0, 2, 3


def _config(args) -> pl.PipelineConfig:
    if args.config:
        return pl.load_config(args.config, args.seed)
    cfg = pl.PipelineConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    return cfg


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _need_model(args):
    if not args.model:
        raise pl.ConfigError(f"{args.command} needs --model <checkpoint>")
    return args.model


def cmd_sim_build(args, cfg):
    env = build_environment(cfg.sim)
    path = _out(args) / "env.bin"
    save_environment(env, path)
    print(path)


def cmd_dataset(args, cfg):
    out = _out(args)
    prep = pl.prepare(cfg)
    for name, d in (("dataset", prep.data), ("train", prep.train), ("val", prep.val),
                    ("test", prep.test)):
        write_dataset(d, out / f"{name}.tsv")
    print(f"{len(prep.train)}/{len(prep.val)}/{len(prep.test)}")


def cmd_ingest(args, cfg):
    path = args.ratings or cfg.data.path
    if not path:
        raise pl.ConfigError("ingest needs --ratings <file> or data.path")
    try:
        rows, umap, imap = remap_ids(read_ratings(path))
        d = sessions_to_slates(rows, K=cfg.sim.slate_size,
                               positive_threshold=cfg.data.positive_threshold, n_items=len(imap))
    except (OSError, ValueError) as exc:
        raise pl.StageError("ingest", exc) from exc
    write_dataset(d, _out(args) / "dataset.tsv")
    print(f"{len(d)} slates, {len(umap)} users, {len(imap)} items")


def cmd_train(args, cfg):
    out = _out(args)
    prep = pl.prepare(cfg)
    for kind in cfg.model.kinds:
        try:
            pol, _ = pl.build_policy(kind, cfg, prep)
        except Exception as exc:
            raise pl.StageError(f"train:{kind}", exc) from exc
        path = out / f"model-{kind}.bin"
        if pl.save_model(path, kind, pol):
            print(path)


def cmd_eval(args, cfg):
    if not args.model:
        manifest = pl.run_pipeline(cfg, _out(args), command="eval")
        print(manifest.outputs["metrics"])
        return
    prep = pl.prepare(cfg)
    pol, model, _ = pl.load_model(args.model, cfg, prep)
    users = pl._eval_users(cfg, prep.env, prep.bank)
    beta = model.beta if model is not None else float("nan")
    try:
        report = ev.evaluate(pol, prep.env, prep.bank, users, cfg.eval.N,
                             pl._stream(cfg.seed, pl._EVAL),
                             test=prep.test if cfg.eval.hit_recall else None,
                             env_name=prep.env.kind, beta=beta, seed=cfg.seed)
    except Exception as exc:
        raise pl.StageError("eval", exc) from exc
    path = _out(args) / "metrics.csv"
    ev.write_reports([report], path)
    print(path)


def cmd_sweep(args, cfg):
    report = pl.run_beta_sweep(cfg.sweep, cfg, _out(args), workers=args.workers)
    for beta, rep, kind, msg in report.failures:
        log.error("beta=%g replicate=%d %s: %s", beta, rep, kind, msg)
    print(f"{report.n_cells} cells, {len(report.failures)} failed")


def cmd_perturb_study(args, cfg):
    prep = pl.prepare(cfg)
    a_values = [int(a) for a in args.a.split(",")]
    try:
        study = ev.perturbation_study(prep.data, prep.env, a_values,
                                      pl._stream(cfg.seed, pl._EVAL), item_table=prep.bank.item_table,
                                      n_trials=args.trials)
    except ValueError as exc:
        raise pl.ConfigError(str(exc)) from None
    path = _out(args) / "perturb.csv"
    study.write_csv(path)
    for a, shift in study.mean_abs_shift.items():
        print(f"a={a} mean_abs_shift={shift:.6g}")


def cmd_recon_scan(args, cfg):
    ckpt = _need_model(args)
    prep = pl.prepare(cfg)
    _, model, kind = pl.load_model(ckpt, cfg, prep)
    if model is None:
        raise pl.ConfigError("recon-scan needs a CVAE checkpoint")
    path = _out(args) / "recon_scan.csv"
    pl.emit_reconstruction_scan(model, prep.data, prep.env, path, seed=cfg.seed, kind=kind)
    print(path)


def cmd_dump_z(args, cfg):
    ckpt = _need_model(args)
    prep = pl.prepare(cfg)
    pol, model, kind = pl.load_model(ckpt, cfg, prep)
    if model is None:
        raise pl.ConfigError("dump-z needs a CVAE checkpoint")
    users = pl._eval_users(cfg, prep.env, prep.bank)
    samples, z = ev.sample_slates(pol, users, cfg.eval.N, pl._stream(cfg.seed, pl._EVAL),
                                  prep.bank, return_z=True)
    path = _out(args) / f"z-{kind}.txt"
    pl.write_z_dump(path, samples, z)
    print(path)


COMMANDS = {
    "sim-build": (cmd_sim_build, "build a simulator and save it"),
    "dataset": (cmd_dataset, "simulate or load data, balance and split"),
    "ingest": (cmd_ingest, "turn a rating log into fixed-size slates"),
    "train": (cmd_train, "train every configured model kind and save checkpoints"),
    "eval": (cmd_eval, "evaluate a checkpoint, or run the whole pipeline"),
    "sweep": (cmd_sweep, "train and evaluate over a beta grid"),
    "perturb-study": (cmd_perturb_study, "expected clicks after perturbing logged slates"),
    "recon-scan": (cmd_recon_scan, "score posterior-mean reconstructions of logged slates"),
    "dump-z": (cmd_dump_z, "dump generated slates with their latent codes"),
}


def _global_flags(p: argparse.ArgumentParser, suppress: bool):
    # subcommands repeat the global flags; their defaults must not clobber values given earlier
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    p.add_argument("--config", default=d(None), help="INI config file")
    p.add_argument("--seed", type=int, default=d(None), help="master seed (overrides [run] seed)")
    p.add_argument("--out", default=d("out"), help="output directory")
    p.add_argument("--workers", type=int, default=d(1), help="parallel sweep cells")
    p.add_argument("-v", "--verbose", action="store_true", default=d(False))


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="slaterec")
    _global_flags(p, suppress=False)
    sub = p.add_subparsers(dest="command", required=True)
    for name, (_, help_) in COMMANDS.items():
        sp = sub.add_parser(name, help=help_)
        _global_flags(sp, suppress=True)
        if name in ("eval", "recon-scan", "dump-z"):
            sp.add_argument("--model", help="checkpoint written by train")
        if name == "ingest":
            sp.add_argument("--ratings", help="tab-separated user item rating timestamp file")
        if name == "perturb-study":
            sp.add_argument("--a", default="0,1,3,5", help="comma-separated perturbation counts")
            sp.add_argument("--trials", type=int, default=None, help="records drawn per click group")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.workers < 1:
            raise pl.ConfigError("--workers must be >= 1")
        cfg = _config(args)
        COMMANDS[args.command][0](args, cfg)
    except pl.ConfigError as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    except pl.StageError as exc:
        log.error("%s", exc)
        return EXIT_STAGE
    except Exception as exc:  # noqa: BLE001 - any other failure is a stage failure
        log.error("stage %s failed: %s", args.command, exc)
        return EXIT_STAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
