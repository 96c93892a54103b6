from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from ..defense.decision import SimConfig
from ..featurespace import SyntheticConfig

DEFENSES = ("none", "malprotect-lr", "malprotect-nn", "l0", "prada", "sd")
MODELS = ("mlp", "nn-at", "nn-dd", "majority", "veto")


class ConfigError(ValueError):
    pass


@dataclass
class TrainingConfig:
    epochs: int = 30
    learning_rate: float = 0.05
    batch_size: int = 32
    ae_epochs: int = 40
    ae_learning_rate: float = 2.0
    distill_temperature: float = 20.0
    adv_fraction: float = 0.25
    transfer_epsilon: float = 0.1
    transfer_rounds: int = 50
    ensemble_members: int = 3


@dataclass
class DefenseConfig:
    capacity: int = 10_000
    pair_budget: int = 100_000
    min_history: int = 30
    clamp: bool = True
    l0_threshold: int = 10
    sd_k: int = 50
    sd_percentile: float = 0.1
    prada_delta: float = 0.9


@dataclass
class AttackSpec:
    strategy: str = "graybox"
    m: int = 10
    p: float = 0.5
    pool_min_support: float = 0.5


@dataclass
class ExperimentConfig:
    data: SyntheticConfig = field(default_factory=SyntheticConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    defense: DefenseConfig = field(default_factory=DefenseConfig)
    simulation: SimConfig = field(default_factory=SimConfig)
    attack: AttackSpec = field(default_factory=AttackSpec)
    defenses: list[str] = field(default_factory=lambda: list(DEFENSES))
    models: list[str] = field(default_factory=lambda: list(MODELS))
    n_max_grid: list[int] = field(default_factory=lambda: [100, 200, 300, 400, 500])
    k_grid: list[float] = field(default_factory=lambda: [round(0.1 * i, 1) for i in range(1, 10)])
    q_grid: list[int] = field(default_factory=lambda: [10_000, 20_000, 30_000, 40_000, 50_000])
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2, 3, 4])
    seed: int = 0
    n_attack_samples: int = 200
    n_init_history: int = 2000
    mix_queries: int = 1000
    bench_batch: int = 100
    output_dir: str = "runs"

    def validate(self) -> None:
        for name in ("n_max_grid", "k_grid", "q_grid", "seeds", "defenses", "models"):
            if not getattr(self, name):
                raise ConfigError(f"{name} must be nonempty")
        bad = set(self.defenses) - set(DEFENSES)
        if bad:
            raise ConfigError(f"unknown defenses {sorted(bad)}")
        bad = set(self.models) - set(MODELS)
        if bad:
            raise ConfigError(f"unknown prediction models {sorted(bad)}")
        if sorted(self.q_grid) != list(self.q_grid):
            raise ConfigError("q_grid must be ascending")
        if any(not 0 < k < 1 for k in self.k_grid):
            raise ConfigError("k values must lie strictly between 0 and 1")
        if any(q < 1 for q in self.q_grid):
            raise ConfigError("q_grid sizes must be positive")
        if self.n_attack_samples < 1 or self.mix_queries < 1 or self.bench_batch < 1:
            raise ConfigError("sample, query and batch counts must be positive")
        if self.n_init_history > self.defense.capacity:
            raise ConfigError("n_init_history exceeds the history capacity")
        if self.attack.strategy not in ("blackbox", "graybox", "adaptive"):
            raise ConfigError(f"unknown attack strategy {self.attack.strategy!r}")
        try:
            self.data.validate()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def to_json(self) -> dict:
        return dataclasses.asdict(self)

    def digest(self) -> str:
        """Hash of everything that affects results; the output location does not."""
        obj = self.to_json()
        obj.pop("output_dir")
        blob = json.dumps(obj, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


def _build(cls, obj: dict):
    if not isinstance(obj, dict):
        raise ConfigError(f"expected an object for {cls.__name__}")
    names = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(obj) - set(names)
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    kwargs = {}
    for key, val in obj.items():
        default = getattr(cls(), key)
        if dataclasses.is_dataclass(default):
            kwargs[key] = _build(type(default), val)
        elif isinstance(default, tuple):
            kwargs[key] = tuple(val)
        else:
            kwargs[key] = val
    return cls(**kwargs)


def config_from_dict(obj: dict) -> ExperimentConfig:
    try:
        cfg = _build(ExperimentConfig, obj)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    cfg.validate()
    return cfg


def load_config(path: str | Path | None) -> ExperimentConfig:
    if path is None or str(path) == "default":
        cfg = ExperimentConfig()
        cfg.validate()
        return cfg
    try:
        obj = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return config_from_dict(obj)
