"""Prior stateful defenses: L0 similarity, Stateful Detection (SD) and PRADA."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.special import ndtri

from .defense.history import QueryHistory
from .defense.oracle import Oracle, defensive_action
from .featurespace import FeatureVector, pack_many, popcount_rows


class UndefinedStatistic(ValueError):
    pass


# L0 similarity

def l0_check(q: FeatureVector, history: QueryHistory, threshold: int = 10) -> bool:
    """Attack iff some history entry lies strictly closer than ``threshold``."""
    if len(history) == 0:
        return False
    dist, _ = history.scan(q)
    return bool(dist.min() < threshold)


class L0Oracle(Oracle):
    name = "l0"

    def __init__(self, model, dim: int, threshold: int = 10, capacity: int = 10_000):
        if threshold < 1:
            raise ValueError("threshold must be >= 1")
        super().__init__(model, dim, capacity)
        self.threshold = threshold

    def predict(self, q):
        attack = l0_check(q, self.history, self.threshold)
        self.history.append(q)
        return defensive_action(attack, self.model, q)


# Stateful Detection

def knn_mean_distances(vectors: Sequence[FeatureVector], k: int, chunk: int = 256) -> np.ndarray:
    """Mean L0 distance from each vector to its k nearest others (self excluded)."""
    packed = pack_many(vectors)
    counts = popcount_rows(packed)
    n = len(vectors)
    out = np.empty(n)
    for s in range(0, n, chunk):
        block = packed[s:s + chunk]
        shared = np.bitwise_count(block[:, None, :] & packed[None, :, :]).sum(axis=2, dtype=np.int64)
        dist = counts[s:s + chunk, None] + counts[None, :] - 2 * shared
        rows = np.arange(block.shape[0])
        dist[rows, s + rows] = np.iinfo(np.int64).max
        out[s:s + chunk] = np.sort(np.partition(dist, k - 1, axis=1)[:, :k], axis=1).mean(axis=1)
    return out


def sd_calibrate(training: Sequence[FeatureVector], k: int = 50, percentile: float = 0.1) -> float:
    """``percentile``-th percentile (0-100 scale) of the training k-NN mean distances."""
    if len(training) <= k:
        raise ValueError(f"need more than k={k} training vectors")
    return float(np.percentile(knn_mean_distances(training, k), percentile))


def sd_check(q: FeatureVector, history: QueryHistory, k: int, threshold: float) -> bool:
    if len(history) < k:
        return False
    dist, _ = history.scan(q)
    nearest = np.partition(dist, k - 1)[:k]
    return bool(nearest.mean() < threshold)


class SDOracle(Oracle):
    name = "sd"

    def __init__(self, model, dim: int, threshold: float, k: int = 50, capacity: int = 10_000):
        super().__init__(model, dim, capacity)
        self.k = k
        self.threshold = threshold

    def predict(self, q):
        attack = sd_check(q, self.history, self.k, self.threshold)
        self.history.append(q)
        return defensive_action(attack, self.model, q)


def save_sd_threshold(path, k: int, percentile: float, threshold: float) -> None:
    Path(path).write_text(json.dumps({"k": k, "percentile": percentile, "threshold": threshold},
                                     sort_keys=True, indent=2) + "\n")


# Shapiro-Wilk (Royston's approximation of the normal-order-statistic coefficients)

_C1 = (0.0, 0.221157, -0.147981, -2.071190, 4.434685, -2.706056)
_C2 = (0.0, 0.042981, -0.293762, -1.752461, 5.682633, -3.582633)
_coef_cache: dict[int, np.ndarray] = {}


def _poly(c, x):
    return sum(ci * x**i for i, ci in enumerate(c))


def shapiro_coefficients(n: int) -> np.ndarray:
    if n in _coef_cache:
        return _coef_cache[n]
    if n < 3:
        raise UndefinedStatistic("Shapiro-Wilk needs at least 3 values")
    if n == 3:
        a = np.array([-np.sqrt(0.5), 0.0, np.sqrt(0.5)])
    else:
        m = ndtri((np.arange(1, n + 1) - 0.375) / (n + 0.25))
        mm = m @ m
        u = 1.0 / np.sqrt(n)
        a = m / np.sqrt(mm)
        an = a[-1] + _poly(_C1, u)
        if n > 5:
            an1 = a[-2] + _poly(_C2, u)
            phi = (mm - 2 * m[-1] ** 2 - 2 * m[-2] ** 2) / (1 - 2 * an**2 - 2 * an1**2)
            a = m / np.sqrt(phi)
            a[-1], a[-2] = an, an1
            a[0], a[1] = -an, -an1
        else:
            phi = (mm - 2 * m[-1] ** 2) / (1 - 2 * an**2)
            a = m / np.sqrt(phi)
            a[-1], a[0] = an, -an
    if len(_coef_cache) > 64:
        _coef_cache.clear()
    _coef_cache[n] = a
    return a


def shapiro_wilk(samples: Sequence[float]) -> float:
    x = np.sort(np.asarray(samples, dtype=np.float64))
    n = x.size
    if not 3 <= n <= 5000:
        raise UndefinedStatistic(f"Shapiro-Wilk is defined here for 3 <= n <= 5000, got {n}")
    ss = ((x - x.mean()) ** 2).sum()
    if ss <= 0 or x[-1] == x[0]:
        raise UndefinedStatistic("zero variance sample")
    a = shapiro_coefficients(n)
    return float(min((a @ x) ** 2 / ss, 1.0))


# PRADA

class _GrowingSet:
    def __init__(self, words: int):
        self.packed = np.zeros((64, words), dtype=np.uint64)
        self.counts = np.zeros(64, dtype=np.int64)
        self.size = 0

    def add(self, q: FeatureVector) -> None:
        if self.size == self.packed.shape[0]:
            self.packed = np.concatenate([self.packed, np.zeros_like(self.packed)])
            self.counts = np.concatenate([self.counts, np.zeros_like(self.counts)])
        self.packed[self.size] = q.packed()
        self.counts[self.size] = q.enabled_count
        self.size += 1

    def min_distance(self, q: FeatureVector) -> int:
        shared = np.bitwise_count(self.packed[: self.size] & q.packed()).sum(axis=1, dtype=np.int64)
        return int((self.counts[: self.size] + q.enabled_count - 2 * shared).min())


@dataclass
class PradaState:
    """One growing set per predicted class plus the minimum distances seen so far."""

    dim: int
    delta: float = 0.9
    min_samples: int = 30
    window: int = 5000
    dmin_values: list[float] = field(default_factory=list)
    w_values: list[float] = field(default_factory=list)
    attack_flagged: bool = False

    def __post_init__(self):
        if not 0 < self.delta < 1:
            raise ValueError("delta must lie in (0, 1)")
        self._sets: dict[int, _GrowingSet] = {}
        self._sum = 0.0
        self._sq = 0.0

    @property
    def growing_set_size(self) -> int:
        return sum(g.size for g in self._sets.values())

    def reset(self) -> None:
        self.__init__(self.dim, self.delta, self.min_samples, self.window)


def prada_update(state: PradaState, q: FeatureVector, history=None, label: int = 0) -> bool:
    """Process one query answered with ``label``; returns the (sticky) attack flag.

    The first query of a class only seeds that class's growing set. Later
    queries record their minimum L0 distance to the set of their class and
    join it when that distance exceeds mean - stdev of the minima so far.
    """
    group = state._sets.get(label)
    if group is None:
        group = state._sets[label] = _GrowingSet((state.dim + 63) // 64)
        group.add(q)
        return state.attack_flagged
    dmin = float(group.min_distance(q))
    n = len(state.dmin_values)
    if n:
        mean = state._sum / n
        std = np.sqrt(max(state._sq / n - mean * mean, 0.0))
        if dmin > mean - std:
            group.add(q)
    else:
        group.add(q)
    state.dmin_values.append(dmin)
    state._sum += dmin
    state._sq += dmin * dmin
    if len(state.dmin_values) >= state.min_samples and not state.attack_flagged:
        try:
            w = shapiro_wilk(state.dmin_values[-state.window:])
        except UndefinedStatistic:
            # a constant run of minima is as far from normal as it gets
            w = 0.0
        state.w_values.append(w)
        if w < state.delta:
            state.attack_flagged = True
    return state.attack_flagged


class PradaOracle(Oracle):
    name = "prada"

    def __init__(self, model, dim: int, delta: float = 0.9, capacity: int = 10_000, session_log=None):
        super().__init__(model, dim, capacity)
        self.state = PradaState(dim, delta)
        self._log = session_log

    # The growing set and minima belong to one client session. Warm-up traffic
    # from other clients goes to the shared history only.

    def new_session(self):
        self.state.reset()

    def predict(self, q):
        attack = prada_update(self.state, q, label=int(self.model.predict_label(q)))
        self.history.append(q)
        if self._log is not None:
            self._log.write(json.dumps({"dmin": self.state.dmin_values[-1] if self.state.dmin_values else None,
                                        "w": self.state.w_values[-1] if self.state.w_values else None,
                                        "attack_detected": attack}) + "\n")
        return defensive_action(attack, self.model, q)

    def reset(self):
        super().reset()
        self.state.reset()
