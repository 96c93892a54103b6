"""Trained/calibrated artifacts: built in memory, saved to and loaded from an output directory."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

from ..baselines import save_sd_threshold, sd_calibrate
from ..defense.decision import (
    DecisionModel,
    ScoreDataset,
    generate_decision_dataset,
    load_score_csv,
    save_score_csv,
    train_decision_model,
)
from ..defense.indicators import Calibration, calibrate, save_calibration
from ..featurespace import (
    MALWARE,
    Dataset,
    FeatureFamilyTable,
    FeatureVector,
    generate_synthetic_dataset,
    load_dataset,
    save_dataset,
    save_stats,
)
from ..models import (
    TrainingMeta,
    adversarially_train,
    distill,
    load_model,
    model_from_json,
    model_to_json,
    save_model,
    train_autoencoder,
    train_ensemble,
    train_mlp,
    transferability_generate,
)
from .config import ExperimentConfig

log = logging.getLogger(__name__)


class MissingArtifact(FileNotFoundError):
    pass


@dataclass
class Artifacts:
    dataset: Dataset
    table: FeatureFamilyTable
    models: dict = field(default_factory=dict)
    substitute: object = None
    autoencoder: object = None
    adv_train: list[FeatureVector] = field(default_factory=list)
    adv_test: list[FeatureVector] = field(default_factory=list)
    calibration: Calibration | None = None
    sd_threshold: float | None = None
    decision_data: ScoreDataset | None = None
    decision: dict[str, DecisionModel] = field(default_factory=dict)


def _meta(cfg: ExperimentConfig, seed: int) -> TrainingMeta:
    t = cfg.training
    return TrainingMeta(t.epochs, t.learning_rate, t.batch_size, seed)


def make_dataset(cfg: ExperimentConfig) -> Artifacts:
    dataset, table = generate_synthetic_dataset(cfg.data, cfg.seed)
    return Artifacts(dataset, table)


def train_prediction_models(art: Artifacts, cfg: ExperimentConfig) -> Artifacts:
    ds, seed, t = art.dataset, cfg.seed, cfg.training
    log.info("training vanilla MLP and substitute")
    mlp = train_mlp(ds, meta=_meta(cfg, seed + 1))
    art.substitute = train_mlp(ds, [ds.dim, 96, 48, 2], meta=_meta(cfg, seed + 2))
    art.adv_train = transferability_generate(art.substitute, ds.select("train", MALWARE), art.table,
                                             t.transfer_epsilon, t.transfer_rounds)
    art.adv_test = transferability_generate(art.substitute, ds.select("test", MALWARE), art.table,
                                            t.transfer_epsilon, t.transfer_rounds)
    log.info("adversarial pools: %d train, %d test", len(art.adv_train), len(art.adv_test))
    models = {"mlp": mlp}
    models["nn-at"] = adversarially_train(ds, art.adv_train, t.adv_fraction, meta=_meta(cfg, seed + 3), seed=seed + 3)
    models["nn-dd"] = distill(mlp, ds, t.distill_temperature, meta=_meta(cfg, seed + 4), seed=seed + 4)
    majority = train_ensemble(ds, "majority", t.ensemble_members, _meta(cfg, seed + 5), seed=seed + 5)
    models["majority"] = majority
    models["veto"] = type(majority)(majority.members, "veto")
    art.models = models
    return art


def train_reconstruction_model(art: Artifacts, cfg: ExperimentConfig) -> Artifacts:
    t = cfg.training
    log.info("training autoencoder")
    ae_meta = TrainingMeta(t.ae_epochs, t.ae_learning_rate, t.batch_size, cfg.seed + 6)
    art.autoencoder = train_autoencoder(art.dataset.select("train"), meta=ae_meta, seed=cfg.seed + 6)
    return art


def calibrate_defenses(art: Artifacts, cfg: ExperimentConfig) -> Artifacts:
    if art.autoencoder is None:
        raise MissingArtifact("calibration needs a trained autoencoder")
    d = cfg.defense
    training = art.dataset.select("train")
    art.calibration = calibrate(training, art.autoencoder, d.pair_budget, cfg.seed, d.min_history)
    art.calibration.clamp = d.clamp
    art.sd_threshold = sd_calibrate(training, d.sd_k, d.sd_percentile)
    return art


def train_decision_models(art: Artifacts, cfg: ExperimentConfig) -> Artifacts:
    if art.calibration is None or "mlp" not in art.models:
        raise MissingArtifact("decision models need calibration and the vanilla MLP")
    log.info("simulating sessions for the decision dataset")
    art.decision_data = generate_decision_dataset(art.models["mlp"], art.dataset, art.table, art.calibration,
                                                  cfg.simulation, cfg.seed + 7)
    art.decision = {
        "lr": train_decision_model(art.decision_data, "logistic", cfg.seed + 8),
        "nn": train_decision_model(art.decision_data, "mlp", cfg.seed + 8),
    }
    return art


def build_artifacts(cfg: ExperimentConfig) -> Artifacts:
    art = make_dataset(cfg)
    train_prediction_models(art, cfg)
    train_reconstruction_model(art, cfg)
    calibrate_defenses(art, cfg)
    train_decision_models(art, cfg)
    return art


# persistence

def _write_vectors(path: Path, vectors) -> None:
    with open(path, "w") as fh:
        for v in vectors:
            fh.write(json.dumps(v.enabled.tolist()) + "\n")


def _read_vectors(path: Path, dim: int) -> list[FeatureVector]:
    with open(path) as fh:
        return [FeatureVector(dim, json.loads(line)) for line in fh if line.strip()]


def _need(path: Path) -> Path:
    if not path.exists():
        raise MissingArtifact(f"missing artifact {path}")
    return path


def save_dataset_artifacts(art: Artifacts, out: Path) -> list[Path]:
    save_dataset(art.dataset, art.table, out / "dataset")
    return [out / "dataset" / "header.json", out / "dataset" / "samples.jsonl"]


def save_prediction_artifacts(art: Artifacts, out: Path) -> list[Path]:
    mdir = out / "models"
    mdir.mkdir(parents=True, exist_ok=True)
    written = []
    for name, model in {**art.models, "substitute": art.substitute}.items():
        save_model(model, mdir / f"{name}.json")
        written.append(mdir / f"{name}.json")
    adir = out / "adversarial"
    adir.mkdir(exist_ok=True)
    _write_vectors(adir / "train_pool.jsonl", art.adv_train)
    _write_vectors(adir / "test_pool.jsonl", art.adv_test)
    return written + [adir / "train_pool.jsonl", adir / "test_pool.jsonl"]


def save_autoencoder_artifact(art: Artifacts, out: Path) -> list[Path]:
    path = out / "models" / "autoencoder.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    save_model(art.autoencoder, path)
    return [path]


def save_calibration_artifacts(art: Artifacts, cfg: ExperimentConfig, out: Path) -> list[Path]:
    save_calibration(art.calibration, out / "calibration.json", "models/autoencoder.json")
    save_stats(art.calibration.stats, out / "stats.json")
    save_sd_threshold(out / "sd_threshold.json", cfg.defense.sd_k, cfg.defense.sd_percentile, art.sd_threshold)
    return [out / "calibration.json", out / "stats.json", out / "sd_threshold.json"]


def save_decision_artifacts(art: Artifacts, out: Path) -> list[Path]:
    save_score_csv(art.decision_data, out / "decision_dataset.csv")
    written = [out / "decision_dataset.csv"]
    for tag, dm in art.decision.items():
        path = out / "models" / f"decision-{tag}.json"
        path.write_text(json.dumps({"kind": "decision", "decision_kind": dm.kind,
                                    "validation_accuracy": dm.validation_accuracy,
                                    "model": model_to_json(dm.model)}) + "\n")
        written.append(path)
    return written


STAGES = ("dataset", "models", "autoencoder", "calibration", "decision")


def load_artifacts(out: str | Path, stages=STAGES) -> Artifacts:
    """Load the named stages from ``out``; a requested stage that is absent raises MissingArtifact."""
    out = Path(out)
    dataset, table = load_dataset(_need(out / "dataset"))
    art = Artifacts(dataset, table)
    mdir = out / "models"
    if "models" in stages:
        for name in ("mlp", "nn-at", "nn-dd", "majority", "veto"):
            art.models[name] = load_model(_need(mdir / f"{name}.json"))
        art.substitute = load_model(_need(mdir / "substitute.json"))
        art.adv_train = _read_vectors(_need(out / "adversarial" / "train_pool.jsonl"), dataset.dim)
        art.adv_test = _read_vectors(_need(out / "adversarial" / "test_pool.jsonl"), dataset.dim)
    if "autoencoder" in stages or "calibration" in stages:
        art.autoencoder = load_model(_need(mdir / "autoencoder.json"))
    if "calibration" in stages:
        obj = json.loads(_need(out / "calibration.json").read_text())
        art.calibration = Calibration.from_json(obj, art.autoencoder)
        art.sd_threshold = float(json.loads(_need(out / "sd_threshold.json").read_text())["threshold"])
    if "decision" in stages:
        art.decision_data = load_score_csv(_need(out / "decision_dataset.csv"))
        for tag in ("lr", "nn"):
            obj = json.loads(_need(out / "models" / f"decision-{tag}.json").read_text())
            art.decision[tag] = DecisionModel(obj["decision_kind"], model_from_json(obj["model"]),
                                              obj.get("validation_accuracy"))
    return art
