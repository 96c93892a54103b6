import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from stateguard.featurespace import FeatureVector, SyntheticConfig, generate_synthetic_dataset
from stateguard.models import TrainingMeta, train_autoencoder, train_mlp

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def random_vector(rng, dim, density=0.3):
    return FeatureVector(dim, np.flatnonzero(rng.random(dim) < density))


@pytest.fixture(scope="session")
def small_data():
    """A 128-dim synthetic dataset that trains in well under a second."""
    cfg = SyntheticConfig(dim=128, n_per_class=200)
    return generate_synthetic_dataset(cfg, seed=3)


@pytest.fixture(scope="session")
def small_mlp(small_data):
    ds, _ = small_data
    return train_mlp(ds, [ds.dim, 32, 16, 2], TrainingMeta(epochs=15), seed=1)


@pytest.fixture(scope="session")
def small_ae(small_data):
    ds, _ = small_data
    return train_autoencoder(ds.select("train"), [32, 8], TrainingMeta(epochs=30, learning_rate=2.0), seed=2)


@pytest.fixture(scope="session")
def default_artifacts():
    """Everything trained on the default configuration (about 20 s)."""
    from stateguard.harness import ExperimentConfig, build_artifacts

    cfg = ExperimentConfig()
    return cfg, build_artifacts(cfg)


# a CLI configuration small enough to run the whole pipeline in about half a minute
SMALL_CLI_CONFIG = {
    "data": {"n_per_class": 300},
    "simulation": {"n_init": 300, "n_legit_sessions": 20, "n_attack_sessions": 20, "min_rows": 200},
    "n_max_grid": [20, 40], "k_grid": [0.2, 0.8], "q_grid": [500, 1000], "seeds": [0, 1],
    "n_attack_samples": 10, "n_init_history": 200, "mix_queries": 200,
    "models": ["mlp", "veto"], "defenses": ["none", "malprotect-lr", "prada"],
}
PIPELINE = ("gen-data", "train", "sweep", "mix", "importance")


def run_pipeline(out, config_path):
    from stateguard.harness.cli import main

    for command in PIPELINE:
        code = main([command, "--config", str(config_path), "--out", str(out)])
        assert code == 0, f"{command} exited with {code}"


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
