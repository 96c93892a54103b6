"""Adaptive attack against both decision-model variants over the removal fraction p.

usage: python3 scripts/adaptive_sweep.py [--samples N] [--out runs/adaptive.csv]
Trains everything in memory from the default configuration first (about 20 s).
"""

import argparse
import csv
import dataclasses

import numpy as np

from stateguard.attacks import AttackConfig
from stateguard.harness import ExperimentConfig, build_artifacts, run_cell


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--samples", type=int, default=60)
    ap.add_argument("--n-max", type=int, default=500)
    ap.add_argument("--out", default="runs/adaptive.csv")
    args = ap.parse_args()
    cfg = dataclasses.replace(ExperimentConfig(), n_attack_samples=args.samples)
    art = build_artifacts(cfg)
    rows = []
    for defense in ("none", "malprotect-lr", "malprotect-nn"):
        for p in ("graybox", 0.0, 0.25, 0.5, 0.75, 1.0):
            attack = None if p == "graybox" else AttackConfig("adaptive", args.n_max, cfg.attack.m, p)
            cells = [run_cell(art, cfg, defense, "mlp", args.n_max, s, attack) for s in cfg.seeds]
            rate = float(np.mean([c.evasion_rate for c in cells]))
            rows.append({"defense": defense, "attack": "graybox" if p == "graybox" else f"adaptive p={p}",
                         "evasion_rate": rate})
            print(rows[-1], flush=True)
    with open(args.out, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)


if __name__ == "__main__":
    main()
