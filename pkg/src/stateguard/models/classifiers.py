"""Benign/malware prediction models and their robustness variants."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Protocol, Sequence

import numpy as np
from scipy.optimize import minimize

from ..featurespace import Dataset, FeatureVector
from .nn import DenseNet, TrainingError, TrainingMeta, one_hot, sigmoid

DEFAULT_HIDDEN = (128, 64, 32)


def as_matrix(x, dim: int | None = None) -> np.ndarray:
    """FeatureVector, list of FeatureVectors, or array -> 2-D float matrix."""
    if isinstance(x, FeatureVector):
        return x.to_dense()[None, :]
    if isinstance(x, (list, tuple)) and x and isinstance(x[0], FeatureVector):
        out = np.zeros((len(x), x[0].dim))
        for i, v in enumerate(x):
            out[i, v.enabled] = 1.0
        return out
    return np.atleast_2d(np.asarray(x, dtype=np.float64))


class PredictionModel(Protocol):
    def predict_proba(self, x) -> np.ndarray | float: ...

    def predict_label(self, x) -> np.ndarray | int: ...


def _single(x, values):
    return values[0] if isinstance(x, FeatureVector) or np.ndim(x) == 1 else values


@dataclass
class MLPClassifier:
    net: DenseNet
    meta: TrainingMeta = field(default_factory=TrainingMeta)
    validation_accuracy: float | None = None
    notes: list[str] = field(default_factory=list)

    kind = "mlp"

    @property
    def layer_sizes(self) -> list[int]:
        return self.net.layer_sizes

    def proba_matrix(self, X) -> np.ndarray:
        return self.net.forward(as_matrix(X))

    def predict_proba(self, x):
        return _single(x, self.proba_matrix(x)[:, 1])

    def predict_label(self, x):
        p = self.proba_matrix(x)[:, 1]
        return _single(x, (p >= 0.5).astype(np.int64))


@dataclass
class LogisticModel:
    coef: np.ndarray
    intercept: float
    validation_accuracy: float | None = None

    kind = "logistic"

    def decision_function(self, X) -> np.ndarray:
        return as_matrix(X) @ self.coef + self.intercept

    def predict_proba(self, x):
        return _single(x, sigmoid(self.decision_function(x)))

    def predict_label(self, x):
        return _single(x, (sigmoid(self.decision_function(x)) >= 0.5).astype(np.int64))


@dataclass
class EnsembleModel:
    members: list
    mode: str = "majority"

    kind = "ensemble"

    def __post_init__(self):
        if self.mode == "majority":
            if len(self.members) < 3 or len(self.members) % 2 == 0:
                raise ValueError("majority voting needs an odd number (>= 3) of members")
        elif self.mode == "veto":
            if len(self.members) < 2:
                raise ValueError("veto voting needs at least two members")
        else:
            raise ValueError(f"unknown ensemble mode {self.mode!r}")

    def votes(self, x) -> np.ndarray:
        return np.stack([np.atleast_1d(m.predict_label(x)) for m in self.members], axis=1)

    def predict_proba(self, x):
        # fraction of malware votes (majority) or the most confident member (veto)
        if self.mode == "majority":
            p = self.votes(x).mean(axis=1)
        else:
            p = np.max(np.stack([np.atleast_1d(m.predict_proba(x)) for m in self.members], axis=1), axis=1)
        return _single(x, p)

    def predict_label(self, x):
        return _single(x, ensemble_vote(self.votes(x), self.mode))


def ensemble_vote(votes: np.ndarray, mode: str) -> np.ndarray:
    """Combine a (samples, members) matrix of 0/1 votes."""
    votes = np.atleast_2d(votes)
    if mode == "majority":
        return (2 * votes.sum(axis=1) > votes.shape[1]).astype(np.int64)
    if mode == "veto":
        # any malware vote vetoes a benign verdict
        return votes.max(axis=1).astype(np.int64)
    raise ValueError(f"unknown ensemble mode {mode!r}")


def ensemble_predict(ensemble: EnsembleModel, v: FeatureVector) -> int:
    return int(ensemble.predict_label(v))


def accuracy(model, X, y) -> float:
    return float(np.mean(np.atleast_1d(model.predict_label(X)) == np.asarray(y)))


def _check_labels(y) -> None:
    if np.unique(y).size < 2:
        raise TrainingError("training data must contain both classes")


def fit_mlp(X, Y, layer_sizes: Sequence[int], meta: TrainingMeta) -> MLPClassifier:
    """Train from matrices; ``Y`` holds (soft) target distributions."""
    rng = np.random.default_rng(meta.seed)
    net = DenseNet.init(layer_sizes, rng)
    net.temperature = meta.temperature
    net.sgd_epochs(X, Y, meta, rng)
    net.temperature = 1.0
    return MLPClassifier(net, meta)


def train_mlp(dataset: Dataset, layer_sizes: Sequence[int] | None = None,
              meta: TrainingMeta | None = None, seed: int | None = None) -> MLPClassifier:
    meta = meta or TrainingMeta()
    if seed is not None:
        meta = TrainingMeta(**{**meta.to_json(), "seed": seed})
    layer_sizes = list(layer_sizes or [dataset.dim, *DEFAULT_HIDDEN, 2])
    X, y = dataset.matrix("train")
    _check_labels(y)
    model = fit_mlp(X, one_hot(y), layer_sizes, meta)
    Xv, yv = dataset.matrix("validation")
    if yv.size:
        model.validation_accuracy = accuracy(model, Xv, yv)
    return model


def fit_logistic(X, y, l2: float = 1e-4) -> LogisticModel:
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    _check_labels(y)
    n, d = X.shape

    def objective(theta):
        w, b = theta[:d], theta[d]
        z = X @ w + b
        # log(1 + e^z) - y z, computed stably
        loss = np.mean(np.logaddexp(0.0, z) - y * z) + 0.5 * l2 * w @ w
        r = (sigmoid(z) - y) / n
        return loss, np.concatenate([X.T @ r + l2 * w, [r.sum()]])

    res = minimize(objective, np.zeros(d + 1), jac=True, method="L-BFGS-B",
                   options={"maxiter": 1000, "gtol": 1e-10, "ftol": 1e-14})
    return LogisticModel(res.x[:d].copy(), float(res.x[d]))


def train_logistic(dataset: Dataset, l2: float = 1e-4) -> LogisticModel:
    """Regularised maximum-likelihood fit; deterministic, so no seed is needed."""
    X, y = dataset.matrix("train")
    model = fit_logistic(X, y, l2)
    Xv, yv = dataset.matrix("validation")
    if yv.size:
        model.validation_accuracy = accuracy(model, Xv, yv)
    return model


def adversarial_quota(n_train: int, n_adv: int, fraction: float) -> int:
    if not 0 < fraction <= 1:
        raise ValueError("fraction must lie in (0, 1]")
    return min(n_adv, int(fraction * n_train))


def adversarially_train(dataset: Dataset, adversarial_examples: Sequence[FeatureVector],
                        fraction: float = 0.25, layer_sizes: Sequence[int] | None = None,
                        meta: TrainingMeta | None = None, seed: int = 0) -> MLPClassifier:
    """Retrain with up to ``fraction * |train|`` adversarial examples labelled malware."""
    meta = TrainingMeta(**{**(meta or TrainingMeta()).to_json(), "seed": seed})
    layer_sizes = list(layer_sizes or [dataset.dim, *DEFAULT_HIDDEN, 2])
    X, y = dataset.matrix("train")
    _check_labels(y)
    quota = adversarial_quota(y.size, len(adversarial_examples), fraction)
    notes = []
    if quota == 0:
        msg = "no adversarial examples available; trained a vanilla model"
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
        notes.append(msg)
    else:
        rng = np.random.default_rng(seed)
        pick = np.sort(rng.choice(len(adversarial_examples), size=quota, replace=False))
        X = np.vstack([X, as_matrix([adversarial_examples[i] for i in pick])])
        y = np.concatenate([y, np.ones(quota, dtype=np.int64)])
        notes.append(f"injected {quota} adversarial examples")
    model = fit_mlp(X, one_hot(y), layer_sizes, meta)
    model.notes = notes
    Xv, yv = dataset.matrix("validation")
    if yv.size:
        model.validation_accuracy = accuracy(model, Xv, yv)
    return model


def distill(teacher: MLPClassifier, dataset: Dataset, temperature: float = 20.0,
            layer_sizes: Sequence[int] | None = None, meta: TrainingMeta | None = None,
            seed: int = 0) -> MLPClassifier:
    """Train a student on the teacher's softened outputs; deployed at temperature 1."""
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    meta = TrainingMeta(**{**(meta or teacher.meta).to_json(), "seed": seed, "temperature": temperature})
    # soft-target gradients shrink like 1/T^2; with plain SGD, scaling the step restores them
    meta.learning_rate *= temperature ** 2
    X, _ = dataset.matrix("train")
    soft = teacher.net.copy()
    soft.temperature = temperature
    targets = soft.forward(X)
    model = fit_mlp(X, targets, list(layer_sizes or teacher.layer_sizes), meta)
    Xv, yv = dataset.matrix("validation")
    if yv.size:
        model.validation_accuracy = accuracy(model, Xv, yv)
    return model


def train_ensemble(dataset: Dataset, mode: str, n_members: int = 3,
                   meta: TrainingMeta | None = None, seed: int = 0) -> EnsembleModel:
    """Members are MLPs that differ in seed and hidden widths."""
    meta = meta or TrainingMeta()
    widths = [(128, 64, 32), (96, 48), (64, 32, 16), (160, 80), (48, 24)]
    members = []
    for i in range(n_members):
        hidden = widths[i % len(widths)]
        members.append(train_mlp(dataset, [dataset.dim, *hidden, 2], meta, seed=seed + 1000 * (i + 1)))
    return EnsembleModel(members, mode)
