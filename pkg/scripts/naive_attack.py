"""Boundary-hugging continuous attack on add-only data, scored before and after the binary constraints.

usage: python3 scripts/naive_attack.py [--samples 200]
"""

import argparse

from stateguard.featurespace import MALWARE, SyntheticConfig, generate_synthetic_dataset
from stateguard.models import TrainingMeta, naive_continuous_attack, train_mlp


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--samples", type=int, default=200)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    ds, table = generate_synthetic_dataset(SyntheticConfig(add_only=True), args.seed)
    sub = train_mlp(ds, [ds.dim, 96, 48, 2], TrainingMeta(seed=args.seed + 2))
    report = naive_continuous_attack(sub, ds.select("test", MALWARE)[: args.samples], table)
    print(f"attempted {report.attempted}")
    print(f"evade in continuous space     {report.continuous_evasions}")
    print(f"evade after thresholding      {report.discretized_evasions}")
    print(f"evade after validity restored {report.validated_evasions}")


if __name__ == "__main__":
    main()
