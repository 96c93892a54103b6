"""Mean evasion per defense and prediction model at each budget, from a finished sweep.

usage: python3 scripts/evasion_table.py runs/default
"""

import csv
import sys
from collections import defaultdict
from pathlib import Path

import numpy as np


def main(out: str) -> None:
    rows = list(csv.DictReader(open(Path(out) / "results" / "sweep.csv")))
    rates = defaultdict(list)
    for r in rows:
        rates[(r["defense"], r["model"], int(r["n_max"]))].append(float(r["evasion_rate"]))
    budgets = sorted({k[2] for k in rates})
    pairs = sorted({k[:2] for k in rates})
    print(f"{'defense':<15}{'model':<10}" + "".join(f"{b:>8}" for b in budgets))
    for d, m in pairs:
        print(f"{d:<15}{m:<10}" + "".join(f"{np.mean(rates[(d, m, b)]):>8.3f}" for b in budgets))


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else "runs/default")
