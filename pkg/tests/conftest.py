import numpy as np
import pytest
import torch

from airfi.csi_core import SAMPLE_SHAPE, Dataset

torch.set_num_threads(1)


def random_dataset(rng: np.random.Generator, n: int, num_classes: int = 4, num_envs: int = 3) -> Dataset:
    amps = rng.normal(size=(n,) + SAMPLE_SHAPE).astype(np.float32)
    labels = rng.integers(0, num_classes, size=n)
    envs = rng.integers(0, num_envs, size=n)
    return Dataset(amps, labels, envs, num_classes, {"origin": "test"})


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_dataset(rng):
    return random_dataset(rng, 12)


TINY_FLAT = {
    "model.encoder_stages": [[4, 5, 4]],
    "model.latent_dim": 8,
    "model.discriminator_widths": [8],
    "model.classifier_widths": [8, 8],
    "train.batch_per_env": 4,
    "train.steps": 3,
    "fewshot.reservoir_size": 16,
    "fewshot.adapt_steps": 2,
}


@pytest.fixture(scope="session")
def tiny_config():
    from airfi.config import AirFiConfig
    return AirFiConfig().with_flat(**TINY_FLAT)


@pytest.fixture(scope="session")
def tiny_data():
    from airfi.synth import GenConfig, generate_dataset
    return generate_dataset(GenConfig(num_envs=3, num_classes=4, samples_per_class_per_env=3, seed=5))


# one line per acceptance criterion, printed at the end of the session
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
