"""Threat indicators: each maps the latest query and the history to a score in [0, 1]."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from ..featurespace import CalibrationError, DatasetStats, FeatureVector, compute_dataset_stats
from ..models.autoencoder import Autoencoder
from .history import QueryHistory

SCORE_NAMES = ("s1", "s2", "s3a", "s3b", "s4a", "s4b")


@dataclass
class Calibration:
    """Training-data reference values the indicators normalise against."""

    stats: DatasetStats
    max_rec_loss: float
    autoencoder: Autoencoder | None = None
    min_history: int = 30
    clamp: bool = True

    def __post_init__(self):
        for name, val in (("avg_dist", self.stats.avg_dist), ("avg_shared", self.stats.avg_shared),
                          ("avg_features", self.stats.avg_features), ("max_rec_loss", self.max_rec_loss)):
            if not val > 0:
                raise CalibrationError(f"{name} must be positive, got {val}")
        if self.min_history < 1:
            raise CalibrationError("min_history must be positive")

    def rec_loss(self, q: FeatureVector) -> float:
        if self.autoencoder is None:
            raise CalibrationError("calibration has no autoencoder")
        return self.autoencoder.reconstruction_loss(q)

    def to_json(self, autoencoder_path: str | None = None) -> dict:
        return {
            "avgDistD": self.stats.avg_dist,
            "avgSharedD": self.stats.avg_shared,
            "avgFeaturesD": self.stats.avg_features,
            "maxRecLossD": self.max_rec_loss,
            "min_history_for_empirical": self.min_history,
            "pair_budget": self.stats.pair_budget,
            "pairs_used": self.stats.pairs_used,
            "clamp": self.clamp,
            "autoencoder": autoencoder_path,
        }

    @classmethod
    def from_json(cls, obj: dict, autoencoder: Autoencoder | None = None) -> "Calibration":
        stats = DatasetStats(float(obj["avgDistD"]), float(obj["avgSharedD"]), float(obj["avgFeaturesD"]),
                             int(obj.get("pair_budget", 0)), int(obj.get("pairs_used", 0)))
        return cls(stats, float(obj["maxRecLossD"]), autoencoder, int(obj["min_history_for_empirical"]),
                   bool(obj.get("clamp", True)))


def calibrate(training: Sequence[FeatureVector], autoencoder: Autoencoder, pair_budget: int = 100_000,
              seed: int = 0, min_history: int = 30) -> Calibration:
    stats = compute_dataset_stats(training, pair_budget, seed)
    max_loss = float(autoencoder.losses(list(training)).max())
    return Calibration(stats, max_loss, autoencoder, min_history)


def save_calibration(calib: Calibration, path, autoencoder_path: str | None = None) -> None:
    Path(path).write_text(json.dumps(calib.to_json(autoencoder_path), sort_keys=True, indent=2) + "\n")


@dataclass(frozen=True)
class IndicatorScores:
    s1: float
    s2: float
    s3a: float
    s3b: float
    s4a: float
    s4b: float

    def as_array(self) -> np.ndarray:
        return np.array([self.s1, self.s2, self.s3a, self.s3b, self.s4a, self.s4b])

    def as_dict(self) -> dict[str, float]:
        return dict(zip(SCORE_NAMES, self.as_array().tolist()))


def percentage_change(value: float, reference: float, clamp: bool = True) -> float:
    raw = (value - reference) / reference
    return min(max(raw, 0.0), 1.0) if clamp else raw


def _empirical_rule(value: float, mean: float, std: float, n: int, min_history: int, clamp: bool) -> float:
    if n < min_history:
        return 0.0
    c = mean + 3.0 * std
    if c <= 0:
        return 0.0
    return percentage_change(value, c, clamp)


def score_s1(q: FeatureVector, history: QueryHistory, calib: Calibration) -> float:
    """Nearest-neighbour L0 distance, relative to the training average (negated)."""
    if len(history) == 0:
        return 0.0
    dist, _ = history.scan(q)
    return _s1_from_min(float(dist.min()), calib)


def _s1_from_min(min_dist: float, calib: Calibration) -> float:
    raw = -(min_dist - calib.stats.avg_dist) / calib.stats.avg_dist
    return min(max(raw, 0.0), 1.0) if calib.clamp else raw


def score_s2(q: FeatureVector, history: QueryHistory, calib: Calibration) -> float:
    if len(history) == 0:
        return 0.0
    return percentage_change(float(history.shared_counts(q).max()), calib.stats.avg_shared, calib.clamp)


def score_s3a(q: FeatureVector, calib: Calibration) -> float:
    return percentage_change(float(q.enabled_count), calib.stats.avg_features, calib.clamp)


def score_s3b(q: FeatureVector, history: QueryHistory, min_history: int = 30, clamp: bool = True) -> float:
    mean, std = history.count_stats()
    return _empirical_rule(float(q.enabled_count), mean, std, len(history), min_history, clamp)


def score_s4a(q: FeatureVector, calib: Calibration, rec_loss: float | None = None) -> float:
    loss = calib.rec_loss(q) if rec_loss is None else rec_loss
    return percentage_change(loss, calib.max_rec_loss, calib.clamp)


def score_s4b(q: FeatureVector, history: QueryHistory, min_history: int = 30, clamp: bool = True,
              rec_loss: float | None = None, calib: Calibration | None = None) -> float:
    if rec_loss is None:
        if calib is None:
            raise ValueError("need rec_loss or a calibration with an autoencoder")
        rec_loss = calib.rec_loss(q)
    mean, std = history.loss_stats()
    return _empirical_rule(rec_loss, mean, std, len(history), min_history, clamp)


def compute_scores(q: FeatureVector, history: QueryHistory, calib: Calibration,
                   rec_loss: float | None = None) -> tuple[IndicatorScores, float]:
    """All six scores against the history as it stands (``q`` not yet appended).

    Returns the scores and the query's reconstruction loss so callers can cache
    it in the history. One popcount pass serves both distance indicators.
    """
    loss = calib.rec_loss(q) if rec_loss is None else rec_loss
    if len(history):
        dist, shared = history.scan(q)
        s1 = _s1_from_min(float(dist.min()), calib)
        s2 = percentage_change(float(shared.max()), calib.stats.avg_shared, calib.clamp)
    else:
        s1 = s2 = 0.0
    n = len(history)
    cm, cs = history.count_stats()
    lm, ls = history.loss_stats()
    scores = IndicatorScores(
        s1,
        s2,
        percentage_change(float(q.enabled_count), calib.stats.avg_features, calib.clamp),
        _empirical_rule(float(q.enabled_count), cm, cs, n, calib.min_history, calib.clamp),
        percentage_change(loss, calib.max_rec_loss, calib.clamp),
        _empirical_rule(loss, lm, ls, n, calib.min_history, calib.clamp),
    )
    return scores, loss
