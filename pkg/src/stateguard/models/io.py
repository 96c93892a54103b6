"""JSON model artifacts: {"kind", "layer_sizes", "weights", "training_meta"}."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .autoencoder import Autoencoder
from .classifiers import EnsembleModel, LogisticModel, MLPClassifier
from .nn import DenseNet, TrainingMeta


def model_to_json(model) -> dict:
    if isinstance(model, (MLPClassifier, Autoencoder)):
        net = model.net.to_json()
        obj = {
            "kind": model.kind,
            "layer_sizes": net["layer_sizes"],
            "weights": {"W": net["weights"], "b": net["biases"]},
            "output": net["output"],
            "training_meta": model.meta.to_json(),
        }
        if isinstance(model, MLPClassifier):
            obj["validation_accuracy"] = model.validation_accuracy
            obj["notes"] = list(model.notes)
        return obj
    if isinstance(model, LogisticModel):
        return {
            "kind": "logistic",
            "layer_sizes": [int(model.coef.size), 1],
            "weights": {"coef": model.coef.tolist(), "intercept": model.intercept},
            "training_meta": {},
            "validation_accuracy": model.validation_accuracy,
        }
    if isinstance(model, EnsembleModel):
        return {"kind": "ensemble", "mode": model.mode, "members": [model_to_json(m) for m in model.members],
                "layer_sizes": [], "weights": {}, "training_meta": {}}
    raise TypeError(f"cannot serialise {type(model).__name__}")


def model_from_json(obj: dict):
    kind = obj["kind"]
    if kind in ("mlp", "autoencoder"):
        net = DenseNet.from_json({
            "layer_sizes": obj["layer_sizes"],
            "weights": obj["weights"]["W"],
            "biases": obj["weights"]["b"],
            "output": obj.get("output", "softmax" if kind == "mlp" else "sigmoid"),
        })
        meta = TrainingMeta(**obj.get("training_meta", {}))
        if kind == "autoencoder":
            return Autoencoder(net, meta)
        return MLPClassifier(net, meta, obj.get("validation_accuracy"), list(obj.get("notes", [])))
    if kind == "logistic":
        w = obj["weights"]
        return LogisticModel(np.asarray(w["coef"], dtype=np.float64), float(w["intercept"]),
                             obj.get("validation_accuracy"))
    if kind == "ensemble":
        return EnsembleModel([model_from_json(m) for m in obj["members"]], obj["mode"])
    raise ValueError(f"unknown model kind {kind!r}")


def save_model(model, path) -> None:
    Path(path).write_text(json.dumps(model_to_json(model)) + "\n")


def load_model(path):
    return model_from_json(json.loads(Path(path).read_text()))
