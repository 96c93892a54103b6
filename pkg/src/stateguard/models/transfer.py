"""Gradient-based adversarial examples crafted on a substitute model."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..featurespace import BENIGN, FeatureFamilyTable, FeatureVector, discretize
from .classifiers import MLPClassifier

_BENIGN_TARGET = np.array([[1.0, 0.0]])


def transferability_generate(substitute: MLPClassifier, malware_samples: Sequence[FeatureVector],
                             table: FeatureFamilyTable, epsilon: float = 0.1,
                             max_rounds: int = 50) -> list[FeatureVector]:
    """Signed-gradient steps toward the benign class, discretized and validated each round.

    A sample contributes its first valid variant that the substitute labels
    benign; samples without one within ``max_rounds`` are dropped.
    """
    out = []
    for x in malware_samples:
        real = x.to_dense()
        for _ in range(max_rounds):
            grad = substitute.net.input_gradient(real, _BENIGN_TARGET)[0]
            real = np.clip(real - epsilon * np.sign(grad), 0.0, 1.0)
            cand = discretize(real, x, table)
            if substitute.predict_label(cand) == BENIGN:
                out.append(cand)
                break
    return out


@dataclass
class NaiveAttackReport:
    attempted: int
    continuous_evasions: int
    discretized_evasions: int
    validated_evasions: int


def naive_continuous_attack(substitute: MLPClassifier, malware_samples: Sequence[FeatureVector],
                            table: FeatureFamilyTable, step: float = 0.01,
                            max_steps: int = 500) -> NaiveAttackReport:
    """Minimal-perturbation attack that ignores the binary, functionality-preserving domain.

    Takes small gradient steps in [0, 1]^M and stops the moment the real-valued
    point crosses the substitute's boundary, as boundary-hugging query attacks
    do. The crossing point is then scored three ways: as is, thresholded at
    0.5, and thresholded plus validity restoration.
    """
    cont = disc = valid = 0
    for x in malware_samples:
        real = x.to_dense()
        crossed = False
        for _ in range(max_steps):
            grad = substitute.net.input_gradient(real, _BENIGN_TARGET)[0]
            norm = np.abs(grad).max()
            if norm == 0:
                break
            real = np.clip(real - step * grad / norm, 0.0, 1.0)
            if substitute.net.forward(real[None, :])[0, 1] < 0.5:
                crossed = True
                break
        if not crossed:
            continue
        cont += 1
        disc += int(substitute.predict_label(discretize(real, x, table, validate=False)) == BENIGN)
        valid += int(substitute.predict_label(discretize(real, x, table)) == BENIGN)
    return NaiveAttackReport(len(malware_samples), cont, disc, valid)
