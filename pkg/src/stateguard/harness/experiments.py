"""Evasion-rate sweeps, traffic-mix metrics and cost benchmarks."""

from __future__ import annotations

import gc
import logging
import time
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..attacks import EXCLUDED, SUCCESS, AttackConfig, build_pool, run_attack
from ..baselines import L0Oracle, PradaOracle, SDOracle
from ..defense.oracle import MalProtectOracle, Oracle, PlainOracle
from ..featurespace import BENIGN, MALWARE, FeatureVector
from .artifacts import Artifacts, MissingArtifact
from .config import ConfigError, ExperimentConfig
from .metrics import MetricsReport, classification_metrics

log = logging.getLogger(__name__)

SWEEP_HEADER = ("defense", "model", "n_max", "seed", "evasion_rate", "median_detection_queries")
MIX_HEADER = ("defense", "model", "k", "seed", "accuracy", "fpr", "f1", "auc")
BENCH_HEADER = ("defense", "q_size", "worst_case_seconds", "bytes")


def build_oracle(defense: str, model_name: str, art: Artifacts, cfg: ExperimentConfig,
                 capacity: int | None = None) -> Oracle:
    if model_name not in art.models:
        raise MissingArtifact(f"prediction model {model_name!r} is not trained")
    model = art.models[model_name]
    dim = art.dataset.dim
    cap = capacity or cfg.defense.capacity
    d = cfg.defense
    if defense == "none":
        return PlainOracle(model, dim, cap)
    if defense in ("malprotect-lr", "malprotect-nn"):
        tag = defense.rsplit("-", 1)[1]
        if tag not in art.decision or art.calibration is None:
            raise MissingArtifact(f"{defense} needs calibration and a trained decision model")
        return MalProtectOracle(model, art.calibration, art.decision[tag], dim, cap)
    if defense == "l0":
        return L0Oracle(model, dim, d.l0_threshold, cap)
    if defense == "prada":
        return PradaOracle(model, dim, d.prada_delta, cap)
    if defense == "sd":
        if art.sd_threshold is None:
            raise MissingArtifact("SD needs a calibrated threshold")
        return SDOracle(model, dim, art.sd_threshold, d.sd_k, cap)
    raise ConfigError(f"unknown defense {defense!r}")


def init_history(oracle: Oracle, training_vectors: Sequence[FeatureVector], n_init: int, seed: int) -> None:
    """Fill the history with ``n_init`` seeded-random training samples as past user activity."""
    if n_init > oracle.history.capacity:
        raise ValueError(f"n_init={n_init} exceeds history capacity {oracle.history.capacity}")
    if n_init == 0:
        return
    rng = np.random.default_rng(seed)
    idx = rng.choice(len(training_vectors), size=n_init, replace=n_init > len(training_vectors))
    oracle.init_history([training_vectors[i] for i in idx])


def sample_seed(seed: int, i: int) -> int:
    return int(np.random.SeedSequence([seed, i]).generate_state(1)[0])


def attack_samples(art: Artifacts, cfg: ExperimentConfig, seed: int) -> tuple[list[FeatureVector], int]:
    """Seeded choice of test malware that the bare model detects; also returns how many were excluded.

    Exclusion depends on the prediction models only, so every defense sees the
    same samples for a given seed.
    """
    malware = art.dataset.select("test", MALWARE)
    order = np.random.default_rng([seed, 17]).permutation(len(malware))
    chosen = [malware[i] for i in order[: cfg.n_attack_samples]]
    keep = []
    for v in chosen:
        if all(int(m.predict_label(v)) == MALWARE for m in (art.models[name] for name in cfg.models)):
            keep.append(v)
    return keep, len(chosen) - len(keep)


@dataclass
class SweepCell:
    defense: str
    model: str
    n_max: int
    seed: int
    successes: int
    attempted: int
    excluded: int
    detection_queries: list[int]

    @property
    def evasion_rate(self) -> float:
        return self.successes / self.attempted

    @property
    def median_detection(self) -> float:
        return float(np.median(self.detection_queries)) if self.detection_queries else float("nan")

    def row(self) -> dict:
        return {"defense": self.defense, "model": self.model, "n_max": self.n_max, "seed": self.seed,
                "evasion_rate": self.evasion_rate, "median_detection_queries": self.median_detection}


def run_cell(art: Artifacts, cfg: ExperimentConfig, defense: str, model: str, n_max: int, seed: int,
             attack: AttackConfig | None = None, samples=None) -> SweepCell:
    attack = attack or AttackConfig(cfg.attack.strategy, n_max, cfg.attack.m, cfg.attack.p, seed)
    attack = AttackConfig(attack.strategy, n_max, attack.m, attack.p, seed)
    if samples is None:
        samples, excluded = attack_samples(art, cfg, seed)
    else:
        excluded = 0
    if not samples:
        raise ValueError("no non-excluded malware samples to attack")
    pools = {"random": build_pool(art.dataset, "random", seed, min_support=cfg.attack.pool_min_support),
             "frequency": build_pool(art.dataset, "frequency", min_support=cfg.attack.pool_min_support)}
    oracle = build_oracle(defense, model, art, cfg)
    init_history(oracle, art.dataset.select("train"), cfg.n_init_history, seed)
    successes = 0
    detections = []
    attempted = 0
    for i, X in enumerate(samples):
        oracle.new_session()
        result = run_attack(oracle, X, pools, attack, art.table, seed=sample_seed(seed, i))
        if result.outcome == EXCLUDED:
            excluded += 1
            continue
        attempted += 1
        successes += result.outcome == SUCCESS
        if result.first_detection is not None:
            detections.append(result.first_detection)
    if attempted == 0:
        raise ValueError("every sample was excluded")
    return SweepCell(defense, model, n_max, seed, successes, attempted, excluded, detections)


def run_evasion_sweep(art: Artifacts, cfg: ExperimentConfig, defenses=None, models=None,
                      n_max_grid=None, seeds=None, attack: AttackConfig | None = None) -> list[SweepCell]:
    cells = []
    for defense in defenses or cfg.defenses:
        for model in models or cfg.models:
            for n_max in n_max_grid or cfg.n_max_grid:
                for seed in seeds or cfg.seeds:
                    cell = run_cell(art, cfg, defense, model, n_max, seed, attack)
                    log.info("%s/%s n_max=%d seed=%d evasion=%.3f", defense, model, n_max, seed,
                             cell.evasion_rate)
                    cells.append(cell)
    return cells


def summarize_sweep(cells: Sequence[SweepCell]) -> list[dict]:
    groups: dict[tuple, list[SweepCell]] = {}
    for c in cells:
        groups.setdefault((c.defense, c.model, c.n_max), []).append(c)
    out = []
    for (defense, model, n_max), group in groups.items():
        rates = np.array([c.evasion_rate for c in group])
        det = [q for c in group for q in c.detection_queries]
        out.append({"defense": defense, "model": model, "n_max": n_max,
                    "mean_evasion_rate": float(rates.mean()), "std_evasion_rate": float(rates.std()),
                    "median_detection_queries": float(np.median(det)) if det else float("nan"),
                    "seeds": len(group)})
    return out


# traffic mix

def mix_counts(k: float, n_queries: int) -> tuple[int, int, int]:
    """(adversarial, benign, non-adversarial malware) query counts for intensity k."""
    n_adv = int(round(k * n_queries))
    n_benign = (n_queries - n_adv) // 2
    return n_adv, n_benign, n_queries - n_adv - n_benign


def _cycle(items, n, rng):
    order = rng.permutation(len(items))
    return [items[order[i % len(items)]] for i in range(n)]


def mix_stream(art: Artifacts, k: float, n_queries: int, seed: int) -> tuple[list[FeatureVector], np.ndarray]:
    if not art.adv_test:
        raise ValueError("the adversarial pool is empty")
    rng = np.random.default_rng([seed, int(round(k * 1000))])
    n_adv, n_ben, n_mal = mix_counts(k, n_queries)
    # held-out samples of both splits, so legitimate traffic rarely repeats a file
    benign = art.dataset.select("validation", BENIGN) + art.dataset.select("test", BENIGN)
    malware = art.dataset.select("validation", MALWARE) + art.dataset.select("test", MALWARE)
    stream = _cycle(art.adv_test, n_adv, rng) + _cycle(benign, n_ben, rng) + _cycle(malware, n_mal, rng)
    labels = np.array([MALWARE] * n_adv + [BENIGN] * n_ben + [MALWARE] * n_mal)
    order = rng.permutation(len(stream))
    return [stream[i] for i in order], labels[order]


@dataclass
class MixResult:
    defense: str
    model: str
    k: float
    seed: int
    report: MetricsReport
    labels: np.ndarray
    predictions: np.ndarray
    scores: np.ndarray

    def row(self) -> dict:
        r = self.report
        return {"defense": self.defense, "model": self.model, "k": self.k, "seed": self.seed,
                "accuracy": r.accuracy, "fpr": r.fpr, "f1": r.f1, "auc": r.auc}


def run_mix_cell(art: Artifacts, cfg: ExperimentConfig, defense: str, model: str, k: float, seed: int) -> MixResult:
    stream, labels = mix_stream(art, k, cfg.mix_queries, seed)
    oracle = build_oracle(defense, model, art, cfg)
    init_history(oracle, art.dataset.select("train"), cfg.n_init_history, seed)
    verdicts = [oracle.predict(q) for q in stream]
    pred = np.array([v.label for v in verdicts])
    scores = np.array([v.internal_score for v in verdicts])
    return MixResult(defense, model, k, seed, classification_metrics(labels, pred, scores), labels, pred, scores)


def run_traffic_mix(art: Artifacts, cfg: ExperimentConfig, defenses=None, models=None, k_grid=None,
                    seeds=None) -> list[MixResult]:
    out = []
    for defense in defenses or cfg.defenses:
        for model in models or cfg.models:
            for k in k_grid or cfg.k_grid:
                for seed in seeds or cfg.seeds:
                    res = run_mix_cell(art, cfg, defense, model, k, seed)
                    log.info("%s/%s k=%.1f seed=%d fpr=%.3f auc=%.3f", defense, model, k, seed,
                             res.report.fpr, res.report.auc)
                    out.append(res)
    return out


# cost benchmarks

@dataclass
class TimingReport:
    defense: str
    q_sizes: list[int]
    worst_case_seconds: list[float]
    bytes: list[int]
    slope: float
    intercept: float
    r2: float

    def rows(self) -> list[dict]:
        return [{"defense": self.defense, "q_size": q, "worst_case_seconds": t, "bytes": b}
                for q, t, b in zip(self.q_sizes, self.worst_case_seconds, self.bytes)]


def linear_fit(x, y) -> tuple[float, float, float]:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = ((y - y.mean()) ** 2).sum()
    r2 = 1.0 - (resid @ resid) / ss_tot if ss_tot > 0 else 1.0
    return float(slope), float(intercept), float(r2)


def _time_pass(oracle: Oracle, queries: Sequence[FeatureVector], best: np.ndarray) -> None:
    for i, q in enumerate(queries):
        t0 = time.perf_counter()
        oracle.predict(q)
        best[i] = min(best[i], time.perf_counter() - t0)


def bench_costs(art: Artifacts, cfg: ExperimentConfig, defense: str = "malprotect-lr", q_grid=None,
                batch: int | None = None, repeats: int = 5, seed: int = 0) -> TimingReport:
    """Worst-case per-query analysis time and serialized history size for each |Q|.

    Every grid point gets its own oracle whose history is filled to exactly
    |Q|, which is also its capacity, so it stays full while timing. A query's
    cost is its fastest of ``repeats`` runs and the worst case is the largest
    such cost over the batch. Passes alternate between grid points, so slow
    spells on a shared machine hit every |Q| alike instead of skewing one.
    """
    q_grid = list(q_grid or cfg.q_grid)
    if sorted(q_grid) != q_grid:
        raise ConfigError("q_grid must be ascending")
    batch = batch or cfg.bench_batch
    rng = np.random.default_rng(seed)
    pool = art.dataset.select("test")
    queries = [pool[i] for i in rng.integers(len(pool), size=batch)]
    oracles = []
    for q_size in q_grid:
        try:
            oracle = build_oracle(defense, "mlp", art, cfg, capacity=max(q_size, 1))
            init_history(oracle, art.dataset.select("train"), q_size, seed)
        except MemoryError as exc:
            raise ResourceError(f"history of {q_size} queries does not fit in memory") from exc
        oracles.append(oracle)
    best = np.full((len(q_grid), batch), np.inf)
    gc_was = gc.isenabled()
    gc.disable()
    try:
        for oracle in oracles:
            _time_pass(oracle, queries, np.full(batch, np.inf))  # warm-up
        for _ in range(repeats):
            for j, oracle in enumerate(oracles):
                _time_pass(oracle, queries, best[j])
    finally:
        if gc_was:
            gc.enable()
    times = [float(row.max()) for row in best]
    sizes = [len(o.history.serialize()) for o in oracles]
    for q_size, t, b in zip(q_grid, times, sizes):
        log.info("%s |Q|=%d worst=%.6fs bytes=%d", defense, q_size, t, b)
    slope, intercept, r2 = linear_fit(q_grid, times) if len(q_grid) > 1 else (0.0, times[0], 1.0)
    return TimingReport(defense, q_grid, times, sizes, slope, intercept, r2)


class ResourceError(RuntimeError):
    pass
