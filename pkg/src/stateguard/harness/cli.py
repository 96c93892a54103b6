"""Command-line entry point: ``stateguard <subcommand> [--seed N] [--config PATH] [--out DIR]``."""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import math
import os
import platform
import sys
from pathlib import Path

import numpy as np
import scipy

from ..attacks import AttackConfig, build_pool, run_attack, write_trace
from ..defense.indicators import SCORE_NAMES
from ..defense.decision import feature_importance
from .artifacts import (
    MissingArtifact,
    calibrate_defenses,
    load_artifacts,
    make_dataset,
    save_autoencoder_artifact,
    save_calibration_artifacts,
    save_dataset_artifacts,
    save_decision_artifacts,
    save_prediction_artifacts,
    train_decision_models,
    train_prediction_models,
    train_reconstruction_model,
)
from .config import DEFENSES, MODELS, ConfigError, ExperimentConfig, load_config
from .experiments import (
    BENCH_HEADER,
    MIX_HEADER,
    SWEEP_HEADER,
    ResourceError,
    attack_samples,
    sample_seed,
    bench_costs,
    build_oracle,
    init_history,
    run_cell,
    run_evasion_sweep,
    run_traffic_mix,
    summarize_sweep,
)

PACKAGE_VERSION = "0.1.0"
log = logging.getLogger("stateguard")


def _fmt(value) -> str:
    if isinstance(value, float):
        return "nan" if math.isnan(value) else repr(value)
    return str(value)


def write_csv(path: Path, header, rows) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(row[h]) for h in header])
    return path


def sha256_file(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_manifest(out: Path, command: str, cfg: ExperimentConfig, written) -> Path:
    """Manifest beside the outputs; no timestamps, so reruns reproduce it byte for byte."""
    manifest = {
        "command": command,
        "config_digest": cfg.digest(),
        "config": {k: v for k, v in cfg.to_json().items() if k != "output_dir"},
        "seed": cfg.seed,
        "versions": {"stateguard": PACKAGE_VERSION, "numpy": np.__version__, "scipy": scipy.__version__,
                     "python": platform.python_version()},
        "artifacts": {str(Path(p).relative_to(out)): sha256_file(p) for p in sorted(map(Path, written))},
    }
    path = out / f"manifest-{command}.json"
    path.write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n")
    return path


# subcommands; each returns the list of files it wrote

def cmd_gen_data(args, cfg, out):
    return save_dataset_artifacts(make_dataset(cfg), out)


def cmd_train(args, cfg, out):
    written = []
    stages = ("models", "autoencoder", "decision") if args.stage == "all" else (args.stage,)
    if "models" in stages:
        art = load_artifacts(out, ("dataset",))
        written += save_prediction_artifacts(train_prediction_models(art, cfg), out)
    if "autoencoder" in stages:
        art = load_artifacts(out, ("dataset",))
        written += save_autoencoder_artifact(train_reconstruction_model(art, cfg), out)
    if "decision" in stages:
        if args.stage == "all":
            written += cmd_calibrate(args, cfg, out)
        art = load_artifacts(out, ("dataset", "models", "calibration"))
        written += save_decision_artifacts(train_decision_models(art, cfg), out)
    return written


def cmd_calibrate(args, cfg, out):
    art = load_artifacts(out, ("dataset", "autoencoder"))
    return save_calibration_artifacts(calibrate_defenses(art, cfg), cfg, out)


def _attack_config(args, cfg) -> AttackConfig:
    return AttackConfig(args.strategy or cfg.attack.strategy, cfg.n_max_grid[-1], cfg.attack.m, cfg.attack.p, cfg.seed)


def cmd_attack(args, cfg, out):
    """One evasion sweep for a single (defense, model, n_max), every configured seed."""
    art = load_artifacts(out)
    n_max = args.n_max or cfg.n_max_grid[-1]
    attack = _attack_config(args, cfg)
    cells = [run_cell(art, cfg, args.defense, args.model, n_max, seed, attack) for seed in cfg.seeds]
    path = out / "results" / f"attack-{attack.strategy}-{args.defense}-{args.model}-{n_max}.csv"
    written = [write_csv(path, SWEEP_HEADER, [c.row() for c in cells])]
    if args.traces:
        written += _write_traces(art, cfg, args, attack, n_max, out)
    return written


def _write_traces(art, cfg, args, attack, n_max, out):
    seed = cfg.seeds[0]
    samples, _ = attack_samples(art, cfg, seed)
    pools = {"random": build_pool(art.dataset, "random", seed, min_support=cfg.attack.pool_min_support),
             "frequency": build_pool(art.dataset, "frequency", min_support=cfg.attack.pool_min_support)}
    oracle = build_oracle(args.defense, args.model, art, cfg)
    init_history(oracle, art.dataset.select("train"), cfg.n_init_history, seed)
    tdir = out / "results" / "traces"
    tdir.mkdir(parents=True, exist_ok=True)
    written = []
    for i, X in enumerate(samples[: args.traces]):
        oracle.new_session()
        cfg_i = AttackConfig(attack.strategy, n_max, attack.m, attack.p, seed)
        result = run_attack(oracle, X, pools, cfg_i, art.table, seed=sample_seed(seed, i), keep_queries=True)
        path = tdir / f"{args.defense}-{args.model}-{i:04d}.jsonl"
        write_trace(path, X, result)
        written.append(path)
    return written


def cmd_sweep(args, cfg, out):
    art = load_artifacts(out)
    attack = _attack_config(args, cfg)
    cells = run_evasion_sweep(art, cfg, attack=attack)
    rdir = out / "results"
    written = [write_csv(rdir / "sweep.csv", SWEEP_HEADER, [c.row() for c in cells])]
    for defense in cfg.defenses:
        for model in cfg.models:
            rows = [c.row() for c in cells if c.defense == defense and c.model == model]
            written.append(write_csv(rdir / "sweep" / f"{defense}__{model}.csv", SWEEP_HEADER, rows))
    summary = summarize_sweep(cells)
    written.append(write_csv(rdir / "sweep_summary.csv", list(summary[0]), summary))
    return written


def cmd_mix(args, cfg, out):
    art = load_artifacts(out)
    results = run_traffic_mix(art, cfg)
    return [write_csv(out / "results" / "mix.csv", MIX_HEADER, [r.row() for r in results])]


def cmd_bench(args, cfg, out):
    art = load_artifacts(out)
    _pin_cpu()
    defenses = args.defense_list.split(",") if args.defense_list else ["malprotect-lr"]
    rows, fits = [], []
    for defense in defenses:
        rep = bench_costs(art, cfg, defense, seed=cfg.seed)
        rows += rep.rows()
        fits.append({"defense": defense, "slope": rep.slope, "intercept": rep.intercept, "r2": rep.r2})
    # timings differ run to run by nature; they live outside the reproducible CSV set
    bench = write_csv(out / "bench" / "bench.csv", BENCH_HEADER, rows)
    fit = write_csv(out / "bench" / "bench_fit.csv", ("defense", "slope", "intercept", "r2"), fits)
    return [bench, fit]


def _pin_cpu() -> None:
    if hasattr(os, "sched_setaffinity"):
        try:
            os.sched_setaffinity(0, {min(os.sched_getaffinity(0))})
        except OSError:
            pass


def cmd_importance(args, cfg, out):
    art = load_artifacts(out, ("dataset", "decision"))
    background = art.decision_data.part("test")[0]
    rows = []
    for tag, dm in sorted(art.decision.items()):
        imp = feature_importance(dm, background, seed=cfg.seed)
        rows += [{"decision_model": tag, "score": name, "importance": float(v)} for name, v in zip(SCORE_NAMES, imp)]
    return [write_csv(out / "results" / "importance.csv", ("decision_model", "score", "importance"), rows)]


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "calibrate": cmd_calibrate,
    "attack": cmd_attack,
    "sweep": cmd_sweep,
    "mix": cmd_mix,
    "bench": cmd_bench,
    "importance": cmd_importance,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="base seed for data and training")
    common.add_argument("--config", default=None, help="JSON config path, or 'default'")
    common.add_argument("--out", default=None, help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")
    parser = argparse.ArgumentParser(prog="stateguard", parents=[common],
                                     description="Stateful query-attack defense laboratory")
    sub = parser.add_subparsers(dest="command", metavar="{" + ",".join(COMMANDS) + "}")
    sub.required = True
    sub.add_parser("gen-data", parents=[common], help="generate the synthetic dataset")
    p = sub.add_parser("train", parents=[common], help="train prediction models, autoencoder, decision models")
    p.add_argument("--stage", choices=("models", "autoencoder", "decision", "all"), default="all")
    sub.add_parser("calibrate", parents=[common], help="calibrate indicator constants and the SD threshold")
    p = sub.add_parser("attack", parents=[common], help="evasion rates for one oracle and budget")
    p.add_argument("--defense", choices=DEFENSES, default="malprotect-lr")
    p.add_argument("--model", choices=MODELS, default="mlp")
    p.add_argument("--n-max", type=int, default=None)
    p.add_argument("--strategy", choices=("blackbox", "graybox", "adaptive"), default=None)
    p.add_argument("--traces", type=int, default=0, help="write per-query traces for the first N samples")
    p = sub.add_parser("sweep", parents=[common], help="evasion rate over the full defense x model x n_max grid")
    p.add_argument("--strategy", choices=("blackbox", "graybox", "adaptive"), default=None)
    sub.add_parser("mix", parents=[common], help="accuracy/FPR/F1/AUC over adversarial intensity k")
    p = sub.add_parser("bench", parents=[common], help="worst-case prediction time and storage vs |Q|")
    p.add_argument("--defenses", dest="defense_list", default=None, help="comma-separated defenses")
    sub.add_parser("importance", parents=[common], help="importance of each indicator score")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg.seed = args.seed
        if args.out is not None:
            cfg.output_dir = args.out
        out = Path(cfg.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        written = COMMANDS[args.command](args, cfg, out)
        write_manifest(out, args.command, cfg, written)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (MissingArtifact, FileNotFoundError) as exc:
        print(f"missing artifact: {exc}", file=sys.stderr)
        return 3
    except (ResourceError, MemoryError) as exc:
        print(f"resource error: {exc}", file=sys.stderr)
        return 4
    return 0


if __name__ == "__main__":
    sys.exit(main())
