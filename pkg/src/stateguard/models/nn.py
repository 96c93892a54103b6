"""Dense feed-forward networks with hand-written backpropagation.

Evaluation order is fixed: layer by layer, ``x @ W + b`` with ``W`` stored
row-major as (fan_in, fan_out). Saved artifacts therefore reproduce
predictions exactly when evaluated by the same numpy build.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np


class TrainingError(ValueError):
    pass


def relu(z):
    return np.maximum(z, 0.0)


def softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


@dataclass
class TrainingMeta:
    epochs: int = 30
    learning_rate: float = 0.05
    batch_size: int = 32
    seed: int = 0
    temperature: float = 1.0
    l2: float = 0.0

    def to_json(self) -> dict:
        return asdict(self)


@dataclass
class DenseNet:
    """ReLU hidden layers; ``output`` is "softmax" or "sigmoid".

    ``temperature`` divides the final logits (defensive distillation trains at
    T > 1 and is deployed at T = 1).
    """

    layer_sizes: list[int]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    output: str = "softmax"
    temperature: float = 1.0

    @classmethod
    def init(cls, layer_sizes, rng: np.random.Generator, output="softmax"):
        weights, biases = [], []
        for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
            scale = np.sqrt(2.0 / fan_in)
            weights.append(rng.normal(0.0, scale, size=(fan_in, fan_out)))
            biases.append(np.zeros(fan_out))
        return cls(list(layer_sizes), weights, biases, output)

    def copy(self) -> "DenseNet":
        return DenseNet(list(self.layer_sizes), [w.copy() for w in self.weights],
                        [b.copy() for b in self.biases], self.output, self.temperature)

    def _activate(self, z):
        z = z / self.temperature
        return softmax(z) if self.output == "softmax" else sigmoid(z)

    def forward(self, X, keep: bool = False):
        """Returns outputs, plus per-layer activations when ``keep``."""
        a = np.asarray(X, dtype=np.float64)
        acts = [a]
        last = len(self.weights) - 1
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            z = a @ W + b
            a = relu(z) if i < last else self._activate(z)
            acts.append(a)
        return (a, acts) if keep else a

    def logits(self, X):
        a = np.asarray(X, dtype=np.float64)
        last = len(self.weights) - 1
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            z = a @ W + b
            a = relu(z) if i < last else z
        return a

    def loss(self, X, Y) -> float:
        """Cross-entropy (softmax head) or mean squared error (sigmoid head)."""
        out = self.forward(X)
        Y = np.asarray(Y, dtype=np.float64)
        if self.output == "softmax":
            return float(-(Y * np.log(np.clip(out, 1e-300, None))).sum(axis=1).mean())
        return float(((out - Y) ** 2).mean())

    def gradients(self, X, Y, l2: float = 0.0):
        """Analytic gradients of ``loss`` (+ l2/2 * |W|^2) w.r.t. weights and biases."""
        X = np.asarray(X, dtype=np.float64)
        Y = np.asarray(Y, dtype=np.float64)
        out, acts = self.forward(X, keep=True)
        n = X.shape[0]
        if self.output == "softmax":
            delta = (out - Y) / (n * self.temperature)
        else:
            # d/dz of mean((s(z/T) - y)^2) over n * width entries
            delta = 2.0 * (out - Y) * out * (1.0 - out) / (out.size * self.temperature)
        gW = [None] * len(self.weights)
        gb = [None] * len(self.weights)
        for i in range(len(self.weights) - 1, -1, -1):
            gW[i] = acts[i].T @ delta + l2 * self.weights[i]
            gb[i] = delta.sum(axis=0)
            if i:
                delta = (delta @ self.weights[i].T) * (acts[i] > 0)
        return gW, gb

    def input_gradient(self, X, Y):
        """Gradient of the loss w.r.t. the inputs, one row per sample (unscaled by n)."""
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        out, acts = self.forward(X, keep=True)
        if self.output == "softmax":
            delta = (out - Y) / self.temperature
        else:
            delta = 2.0 * (out - Y) * out * (1.0 - out) / self.temperature
        for i in range(len(self.weights) - 1, -1, -1):
            delta = delta @ self.weights[i].T
            if i:
                delta = delta * (acts[i] > 0)
        return delta

    def sgd_epochs(self, X, Y, meta: TrainingMeta, rng: np.random.Generator) -> None:
        n = X.shape[0]
        for _ in range(meta.epochs):
            order = rng.permutation(n)
            for s in range(0, n, meta.batch_size):
                idx = order[s:s + meta.batch_size]
                gW, gb = self.gradients(X[idx], Y[idx], meta.l2)
                for i in range(len(self.weights)):
                    self.weights[i] -= meta.learning_rate * gW[i]
                    self.biases[i] -= meta.learning_rate * gb[i]

    def to_json(self) -> dict:
        return {
            "layer_sizes": list(self.layer_sizes),
            "output": self.output,
            "temperature": self.temperature,
            "weights": [w.tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "DenseNet":
        return cls(
            [int(s) for s in obj["layer_sizes"]],
            [np.asarray(w, dtype=np.float64) for w in obj["weights"]],
            [np.asarray(b, dtype=np.float64) for b in obj["biases"]],
            obj.get("output", "softmax"),
            float(obj.get("temperature", 1.0)),
        )


def one_hot(y, k: int = 2) -> np.ndarray:
    y = np.asarray(y, dtype=np.int64)
    out = np.zeros((y.size, k))
    out[np.arange(y.size), y] = 1.0
    return out


def finite_difference_check(net: DenseNet, X, Y, epsilon: float = 1e-4, n_weights: int = 50,
                            seed: int = 0) -> float:
    """Max relative error between backprop and central differences.

    Checks ``n_weights`` randomly chosen weight entries plus every bias entry
    of the output layer.
    """
    if not 0 < epsilon <= 1e-2:
        raise ValueError("epsilon must lie in (0, 1e-2]")
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    Y = np.atleast_2d(np.asarray(Y, dtype=np.float64))
    rng = np.random.default_rng(seed)
    gW, gb = net.gradients(X, Y)
    probe = net.copy()
    params = []
    sizes = [w.size for w in net.weights]
    for _ in range(n_weights):
        layer = int(rng.choice(len(sizes), p=np.array(sizes) / sum(sizes)))
        params.append(("W", layer, int(rng.integers(sizes[layer]))))
    last = len(net.biases) - 1
    params.extend(("b", last, j) for j in range(net.biases[last].size))
    worst = 0.0
    for kind, layer, flat in params:
        arr = (probe.weights if kind == "W" else probe.biases)[layer].reshape(-1)
        orig = arr[flat]
        arr[flat] = orig + epsilon
        up = probe.loss(X, Y)
        arr[flat] = orig - epsilon
        down = probe.loss(X, Y)
        arr[flat] = orig
        numeric = (up - down) / (2 * epsilon)
        analytic = (gW if kind == "W" else gb)[layer].reshape(-1)[flat]
        denom = max(abs(numeric), abs(analytic), 1e-6)
        worst = max(worst, abs(numeric - analytic) / denom)
    return worst
