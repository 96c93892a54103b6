"""Label-only transplantation query attacks (black-box, gray-box, adaptive)."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .featurespace import BENIGN, Dataset, FeatureFamilyTable, FeatureVector, l0_distance, validate_perturbations

SUCCESS, FAILURE, EXCLUDED = "success", "failure", "excluded"


@dataclass(frozen=True)
class BenignFeaturePool:
    ordering: tuple[int, ...]
    mode: str
    frequencies: dict[int, int]

    def __len__(self) -> int:
        return len(self.ordering)

    @property
    def array(self) -> np.ndarray:
        return np.asarray(self.ordering, dtype=np.int64)


def build_pool(dataset: Dataset, mode: str = "frequency", seed: int = 0,
               split: str = "train", min_support: float = 0.5) -> BenignFeaturePool:
    """Benign features, ordered randomly ("random") or by benign frequency ("frequency").

    A feature is in the pool when at least ``min_support`` of the benign
    samples carry it; ``min_support=0`` admits the whole vocabulary. Frequency
    order is nonincreasing count with ties broken by ascending index, so
    never-seen features come last.
    """
    benign = dataset.select(split, BENIGN)
    if not benign:
        raise ValueError("no benign samples to build a pool from")
    counts = np.zeros(dataset.dim, dtype=np.int64)
    for v in benign:
        counts[v.enabled] += 1
    members = np.flatnonzero(counts >= min_support * len(benign))
    if mode == "frequency":
        order = members[np.lexsort((members, -counts[members]))]
    elif mode == "random":
        order = np.random.default_rng(seed).permutation(members)
    else:
        raise ValueError(f"unknown pool mode {mode!r}")
    return BenignFeaturePool(tuple(int(i) for i in order), mode,
                             {int(i): int(c) for i, c in enumerate(counts)})


@dataclass
class AttackConfig:
    strategy: str = "graybox"
    n_max: int = 500
    m: int = 10
    p: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.strategy not in ("blackbox", "graybox", "adaptive"):
            raise ValueError(f"unknown strategy {self.strategy!r}")
        if self.n_max < 1 or self.m < 1 or not 0.0 <= self.p <= 1.0:
            raise ValueError("need n_max >= 1, m >= 1 and p in [0, 1]")


@dataclass
class AttackResult:
    outcome: str
    queries_used: int
    final_vector: FeatureVector
    detection_trace: list[bool] = field(default_factory=list)
    oracle_labels: list[int] = field(default_factory=list)
    queries: list[FeatureVector] = field(default_factory=list)

    @property
    def first_detection(self) -> int | None:
        """1-based index of the first query the defense flagged."""
        for i, flag in enumerate(self.detection_trace):
            if flag:
                return i + 1
        return None


class QueryChannel:
    """What the attacker holds: a label-only view of an oracle.

    Verdicts (with detection flags) are kept on the defender side for the
    harness and are never returned to the attack loop.
    """

    def __init__(self, oracle, keep_queries: bool = False):
        self._oracle = oracle
        self.verdicts = []
        self.queries = []
        self._keep = keep_queries

    def __call__(self, v: FeatureVector) -> int:
        verdict = self._oracle.predict(v)
        self.verdicts.append(verdict)
        if self._keep:
            self.queries.append(v)
        return int(verdict.label)


def _transplant_loop(query: Callable[[FeatureVector], int], X: FeatureVector, anchors: np.ndarray,
                     n_max: int, table: FeatureFamilyTable, rng: np.random.Generator,
                     bulk_cap: int | None = None, remove_p: float | None = None):
    """Shared control flow of the three strategies. Returns (outcome, n, X')."""
    if query(X) == BENIGN:
        return EXCLUDED, 1, X
    Xp = X
    n = 0
    length = anchors.size
    removable = table.removable_mask
    while n < n_max and n < length:
        Xp = Xp.with_added([anchors[n]])
        r = int(rng.integers(0, (length if bulk_cap is None else bulk_cap) + 1))
        if r:
            Xp = Xp.with_added(rng.choice(anchors, size=min(r, length), replace=False))
        if remove_p is not None:
            cand = Xp.enabled[removable[Xp.enabled]]
            k = int(np.floor(remove_p * cand.size))
            if k:
                Xp = Xp.with_removed(rng.choice(cand, size=k, replace=False))
        Xp = validate_perturbations(X, Xp, table)
        n += 1
        if query(Xp) == BENIGN:
            return SUCCESS, n, Xp
    return FAILURE, n, Xp


def _run(oracle, X, anchors, n_max, table, seed, keep_queries, **kw) -> AttackResult:
    channel = QueryChannel(oracle, keep_queries)
    rng = np.random.default_rng(seed)
    outcome, n, final = _transplant_loop(channel, X, anchors, n_max, table, rng, **kw)
    return AttackResult(outcome, n, final, [bool(v.attack_detected) for v in channel.verdicts],
                        [int(v.label) for v in channel.verdicts], channel.queries)


def run_blackbox(oracle, X: FeatureVector, pool: BenignFeaturePool, n_max: int,
                 table: FeatureFamilyTable, seed: int = 0, keep_queries: bool = False) -> AttackResult:
    if pool.mode != "random":
        raise ValueError("black-box attack expects a randomly ordered pool")
    return _run(oracle, X, pool.array, n_max, table, seed, keep_queries)


def run_graybox(oracle, X: FeatureVector, pool: BenignFeaturePool, n_max: int,
                table: FeatureFamilyTable, seed: int = 0, keep_queries: bool = False) -> AttackResult:
    if pool.mode != "frequency":
        raise ValueError("gray-box attack expects a frequency-sorted pool")
    return _run(oracle, X, pool.array, n_max, table, seed, keep_queries)


def run_adaptive(oracle, X: FeatureVector, pool: BenignFeaturePool, n_max: int, m: int, p: float,
                 table: FeatureFamilyTable, seed: int = 0, keep_queries: bool = False) -> AttackResult:
    if pool.mode != "frequency":
        raise ValueError("adaptive attack expects a frequency-sorted pool")
    if m < 1 or not 0.0 <= p <= 1.0:
        raise ValueError("need m >= 1 and p in [0, 1]")
    return _run(oracle, X, pool.array, n_max, table, seed, keep_queries, bulk_cap=m, remove_p=p)


def run_attack(oracle, X: FeatureVector, pools: dict[str, BenignFeaturePool], config: AttackConfig,
               table: FeatureFamilyTable, seed: int | None = None, keep_queries: bool = False) -> AttackResult:
    seed = config.seed if seed is None else seed
    if config.strategy == "blackbox":
        return run_blackbox(oracle, X, pools["random"], config.n_max, table, seed, keep_queries)
    if config.strategy == "graybox":
        return run_graybox(oracle, X, pools["frequency"], config.n_max, table, seed, keep_queries)
    return run_adaptive(oracle, X, pools["frequency"], config.n_max, config.m, config.p, table, seed,
                        keep_queries)


def write_trace(path: str | Path, X: FeatureVector, result: AttackResult) -> None:
    """JSON-lines trace: {n, l0_from_original, oracle_label, attack_detected}; needs kept queries."""
    with open(path, "w") as fh:
        for n, (q, detected, label) in enumerate(zip(result.queries, result.detection_trace,
                                                     result.oracle_labels)):
            fh.write(json.dumps({"n": n, "l0_from_original": l0_distance(X, q),
                                 "oracle_label": label, "attack_detected": detected}) + "\n")
