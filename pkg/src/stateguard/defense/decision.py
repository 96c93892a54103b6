"""Decision models over indicator scores, their training data, and their interpretation."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from ..attacks import AttackConfig, build_pool, run_attack
from ..featurespace import MALWARE, Dataset, FeatureFamilyTable, split_tags
from ..models.classifiers import LogisticModel, MLPClassifier, accuracy, fit_logistic, fit_mlp
from ..models.nn import TrainingError, TrainingMeta, one_hot
from .history import QueryHistory
from .indicators import SCORE_NAMES, Calibration, IndicatorScores
from .oracle import ScoreRecorder

N_SCORES = len(SCORE_NAMES)


@dataclass
class ScoreDataset:
    X: np.ndarray
    y: np.ndarray
    splits: np.ndarray

    def part(self, split: str) -> tuple[np.ndarray, np.ndarray]:
        mask = self.splits == split
        return self.X[mask], self.y[mask]

    def __len__(self) -> int:
        return int(self.y.size)


def save_score_csv(data: ScoreDataset, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([*SCORE_NAMES, "label", "split"])
        for row, label, split in zip(data.X, data.y, data.splits):
            w.writerow([repr(float(v)) for v in row] + [int(label), split])


def load_score_csv(path) -> ScoreDataset:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    X = np.array([[float(r[k]) for k in SCORE_NAMES] for r in rows])
    y = np.array([int(r["label"]) for r in rows])
    splits = np.array([r.get("split") or "train" for r in rows], dtype=object)
    return ScoreDataset(X, y, splits)


@dataclass
class SimConfig:
    n_init: int = 1000
    n_legit_sessions: int = 60
    legit_session_length: int = 25
    n_attack_sessions: int = 60
    attack_mix: tuple[str, ...] = ("blackbox", "graybox")
    attack_n_max: int = 40
    stubborn_fraction: float = 0.5
    capacity: int = 10_000
    min_rows: int = 1000
    split_ratio: tuple[float, float] = (0.8, 0.2)


def generate_decision_dataset(prediction_model, dataset: Dataset, table: FeatureFamilyTable,
                              calibration: Calibration, config: SimConfig | None = None,
                              seed: int = 0) -> ScoreDataset:
    """Replay legitimate and attack sessions through the indicators and label each query.

    The history is first filled with random training samples as stand-in past
    activity. Sessions are then shuffled: legitimate sessions submit training
    samples of either class not yet seen, cycling only once those run out
    (label 0); attack sessions run a transplantation
    attack on a training malware sample (label 1 for every query). A share of
    attack sessions face a stubborn oracle that always answers "malware", which
    yields the long query runs a defended system provokes.
    """
    config = config or SimConfig()
    rng = np.random.default_rng(seed)
    train_idx = dataset.indices("train")
    malware_idx = dataset.indices("train", MALWARE)
    history = QueryHistory(dataset.dim, config.capacity)
    n_init = min(config.n_init, config.capacity)
    order = rng.permutation(train_idx)
    init_idx = rng.choice(train_idx, size=n_init) if n_init > train_idx.size else order[:n_init]
    for i in init_idx:
        v = dataset.vectors[i]
        history.append(v, calibration.rec_loss(v))
    # legitimate users mostly submit files the system has not seen yet
    fresh = order[n_init:] if n_init < train_idx.size else order
    next_fresh = 0
    recorder = ScoreRecorder(prediction_model, calibration, history)
    pools = {"random": build_pool(dataset, "random", seed=int(rng.integers(2**31))),
             "frequency": build_pool(dataset, "frequency")}
    sessions = ["legit"] * config.n_legit_sessions + ["attack"] * config.n_attack_sessions
    for kind in np.asarray(sessions, dtype=object)[rng.permutation(len(sessions))]:
        if kind == "legit":
            recorder.current_label, recorder.stubborn = 0, False
            for _ in range(config.legit_session_length):
                recorder.predict(dataset.vectors[fresh[next_fresh % fresh.size]])
                next_fresh += 1
        else:
            recorder.current_label = 1
            recorder.stubborn = bool(rng.random() < config.stubborn_fraction)
            strategy = config.attack_mix[int(rng.integers(len(config.attack_mix)))]
            attack = AttackConfig(strategy, config.attack_n_max, m=int(rng.integers(5, 30)),
                                  p=float(rng.choice([0.0, 0.25, 0.5, 0.75, 1.0])))
            X = dataset.vectors[int(rng.choice(malware_idx))]
            run_attack(recorder, X, pools, attack, table, seed=int(rng.integers(2**31)))
    y = np.asarray(recorder.labels, dtype=np.int64)
    if y.size < config.min_rows:
        raise ValueError(f"simulation produced {y.size} rows, need at least {config.min_rows}")
    splits = split_tags(y.size, (*config.split_ratio, 0.0), rng)
    splits[splits == "validation"] = "test"
    return ScoreDataset(np.vstack(recorder.rows), y, splits)


@dataclass
class DecisionModel:
    kind: str
    model: LogisticModel | MLPClassifier
    validation_accuracy: float | None = None

    @property
    def kind_tag(self) -> str:
        return "lr" if self.kind == "logistic" else "nn"

    def attack_probability(self, scores) -> np.ndarray | float:
        x = scores.as_array() if isinstance(scores, IndicatorScores) else np.asarray(scores, dtype=np.float64)
        if x.shape[-1] != N_SCORES:
            raise ValueError(f"decision model takes exactly {N_SCORES} scores")
        p = np.atleast_1d(self.model.predict_proba(np.atleast_2d(x)))
        return float(p[0]) if x.ndim == 1 else p

    def predict_attack(self, scores) -> bool:
        return bool(self.attack_probability(scores) >= 0.5)


def train_decision_model(data: ScoreDataset, kind: str = "logistic", seed: int = 0,
                         meta: TrainingMeta | None = None) -> DecisionModel:
    X, y = data.part("train")
    if np.unique(y).size < 2:
        raise TrainingError("decision data must contain attack and no-attack rows")
    if kind == "logistic":
        model = fit_logistic(X, y)
    elif kind == "mlp":
        meta = meta or TrainingMeta(epochs=60, learning_rate=0.05, batch_size=32)
        meta = TrainingMeta(**{**meta.to_json(), "seed": seed})
        model = fit_mlp(X, one_hot(y), [N_SCORES, 128, 64, 32, 2], meta)
    else:
        raise ValueError(f"unknown decision model kind {kind!r}")
    Xt, yt = data.part("test")
    acc = accuracy(model, Xt, yt) if yt.size else None
    model.validation_accuracy = acc
    return DecisionModel(kind, model, acc)


def feature_importance(decision: DecisionModel, background: np.ndarray, seed: int = 0,
                       repeats: int = 5) -> np.ndarray:
    """Global importance per score.

    Logistic: mean |coef_j (x_j - mean_j)|, the exact Shapley attribution of a
    linear logit. MLP: mean absolute change in attack probability when column
    j is permuted.
    """
    background = np.atleast_2d(np.asarray(background, dtype=np.float64))
    if background.shape[0] == 0:
        raise ValueError("background must be nonempty")
    if isinstance(decision.model, LogisticModel):
        return np.abs(linear_attributions(decision.model, background)).mean(axis=0)
    rng = np.random.default_rng(seed)
    base = decision.attack_probability(background)
    out = np.zeros(background.shape[1])
    for j in range(background.shape[1]):
        for _ in range(repeats):
            shuffled = background.copy()
            shuffled[:, j] = background[rng.permutation(background.shape[0]), j]
            out[j] += np.abs(decision.attack_probability(shuffled) - base).mean()
    return out / repeats


def linear_attributions(model: LogisticModel, rows: np.ndarray) -> np.ndarray:
    """Signed per-row attributions; each row sums to logit(row) - logit(mean row)."""
    rows = np.atleast_2d(rows)
    centered = rows - rows.mean(axis=0, keepdims=True)
    centered[:, np.ptp(rows, axis=0) == 0] = 0.0  # a float mean can miss a constant by an ulp
    return model.coef[None, :] * centered
