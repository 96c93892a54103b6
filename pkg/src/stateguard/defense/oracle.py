"""Oracles: a stateful defense in front of a prediction model, label-only to callers."""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..featurespace import FeatureVector
from .history import QueryHistory
from .indicators import Calibration, IndicatorScores, compute_scores


@dataclass(frozen=True)
class OracleVerdict:
    label: int
    attack_detected: bool
    scores: IndicatorScores | None
    internal_score: float

    def __post_init__(self):
        if self.attack_detected and self.label != 1:
            raise AssertionError("a detected attack must be answered with the malware label")


def defensive_action(attack: bool, model, q: FeatureVector, scores=None) -> OracleVerdict:
    """On detection answer "malware" as if the classifier had said so; otherwise defer to it."""
    if attack:
        return OracleVerdict(1, True, scores, 1.0)
    p = float(model.predict_proba(q))
    return OracleVerdict(int(model.predict_label(q)), False, scores, p)


class Oracle:
    """Base: subclasses decide ``detect(q)``; history append happens exactly once per call."""

    name = "none"

    def __init__(self, model, dim: int, capacity: int = 10_000):
        self.model = model
        self.history = QueryHistory(dim, capacity)

    def predict(self, q: FeatureVector) -> OracleVerdict:
        raise NotImplementedError

    def observe(self, q: FeatureVector) -> None:
        """Record a query as past activity without answering it."""
        self.history.append(q)

    def init_history(self, vectors: Sequence[FeatureVector]) -> None:
        for v in vectors:
            self.observe(v)

    def new_session(self) -> None:
        """Hook for defenses that keep per-client state; the query history is shared."""

    def reset(self) -> None:
        self.history.clear()


class PlainOracle(Oracle):
    """The bare prediction model; keeps a history only so storage can be compared."""

    name = "none"

    def predict(self, q):
        verdict = defensive_action(False, self.model, q)
        self.history.append(q)
        return verdict


class MalProtectOracle(Oracle):
    def __init__(self, model, calibration: Calibration, decision_model, dim: int,
                 capacity: int = 10_000, verdict_log=None):
        super().__init__(model, dim, capacity)
        self.calibration = calibration
        self.decision_model = decision_model
        self.name = f"malprotect-{decision_model.kind_tag}"
        self._log = verdict_log

    def observe(self, q):
        self.history.append(q, self.calibration.rec_loss(q))

    def init_history(self, vectors):
        vectors = list(vectors)
        if not vectors:
            return
        # one batched forward pass instead of a pass per vector
        losses = self.calibration.autoencoder.losses(vectors)
        for v, loss in zip(vectors, losses):
            self.history.append(v, float(loss))

    def predict(self, q):
        scores, loss = compute_scores(q, self.history, self.calibration)
        self.history.append(q, loss)
        attack = self.decision_model.predict_attack(scores)
        verdict = defensive_action(attack, self.model, q, scores)
        if self._log is not None:
            self._log.write(json.dumps({"scores": scores.as_dict(), "attack_detected": attack,
                                        "label": verdict.label}) + "\n")
        return verdict


def oracle_predict(oracle: Oracle, q: FeatureVector) -> OracleVerdict:
    return oracle.predict(q)


class ScoreRecorder:
    """Computes indicator scores for a query stream without any decision model.

    Answers come from the wrapped prediction model (or a fixed label when
    ``stubborn``), which is how attack sessions are simulated before a
    decision model exists.
    """

    def __init__(self, model, calibration: Calibration, history: QueryHistory):
        self.model = model
        self.calibration = calibration
        self.history = history
        self.rows: list[np.ndarray] = []
        self.labels: list[int] = []
        self.current_label = 0
        self.stubborn = False

    def predict(self, q):
        scores, loss = compute_scores(q, self.history, self.calibration)
        self.history.append(q, loss)
        self.rows.append(scores.as_array())
        self.labels.append(self.current_label)
        if self.stubborn:
            return OracleVerdict(1, False, scores, 1.0)
        return defensive_action(False, self.model, q, scores)
