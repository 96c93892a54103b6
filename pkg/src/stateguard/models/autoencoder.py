from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..featurespace import FeatureVector
from .classifiers import as_matrix
from .nn import DenseNet, TrainingMeta


def default_bottlenecks(dim: int) -> list[int]:
    return [max(16, dim // 8), max(8, dim // 32)]


@dataclass
class Autoencoder:
    """Sigmoid-output autoencoder scored by mean squared reconstruction error."""

    net: DenseNet
    meta: TrainingMeta = field(default_factory=TrainingMeta)

    kind = "autoencoder"

    @property
    def dim(self) -> int:
        return self.net.layer_sizes[0]

    def reconstruct(self, x) -> np.ndarray:
        return self.net.forward(as_matrix(x))

    def losses(self, x) -> np.ndarray:
        X = as_matrix(x)
        return ((self.net.forward(X) - X) ** 2).mean(axis=1)

    def reconstruction_loss(self, v: FeatureVector) -> float:
        return float(self.losses(v)[0])


def reconstruction_loss(ae: Autoencoder, v: FeatureVector) -> float:
    return ae.reconstruction_loss(v)


def train_autoencoder(training_vectors: Sequence[FeatureVector], bottleneck_sizes: Sequence[int] | None = None,
                      meta: TrainingMeta | None = None, seed: int = 0) -> Autoencoder:
    if not training_vectors:
        raise ValueError("autoencoder needs training vectors")
    dim = training_vectors[0].dim
    hidden = list(bottleneck_sizes or default_bottlenecks(dim))
    if any(h >= dim for h in hidden):
        raise ValueError("bottleneck layers must be narrower than the input")
    sizes = [dim, *hidden, *hidden[-2::-1], dim]
    meta = TrainingMeta(**{**(meta or TrainingMeta(epochs=40, learning_rate=2.0)).to_json(), "seed": seed})
    rng = np.random.default_rng(seed)
    net = DenseNet.init(sizes, rng, output="sigmoid")
    X = as_matrix(list(training_vectors))
    net.sgd_epochs(X, X, meta, rng)
    return Autoencoder(net, meta)
