import numpy as np
import pytest
import torch

from transfer_mia.data import LabeledDataset
from transfer_mia.models import ModelSpec, TrainConfig, build_model, train
from transfer_mia.toy import toy_dataset

torch.set_num_threads(1)

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def random_dataset(n, num_classes=3, shape=(8, 8, 3), seed=0, name="rand"):
    rng = np.random.default_rng(seed)
    labels = np.arange(n) % num_classes
    return LabeledDataset(rng.random((n, *shape), dtype=np.float32), labels,
                          tuple(f"{name}-{i:04d}" for i in range(n)), num_classes, name)


@pytest.fixture(scope="session")
def tiny_spec():
    return ModelSpec("residual", num_classes=10, input_shape=(16, 16, 3), num_blocks=5, width=4)


@pytest.fixture(scope="session")
def fast_cfg():
    return TrainConfig(epochs=3, learning_rate=0.01, batch_size=16, seed=0)


@pytest.fixture(scope="session")
def glyphs_small():
    return toy_dataset("glyphs", 64, seed=3)


@pytest.fixture(scope="session")
def blobs_small():
    return toy_dataset("blobs", 64, seed=4)


@pytest.fixture(scope="session")
def tiny_teacher(tiny_spec, fast_cfg, glyphs_small):
    return train(build_model(tiny_spec, seed=0), glyphs_small, fast_cfg)


def pairwise_auc(scores, labels) -> float:
    """Brute-force oracle: P(member score > non-member score), ties count half."""
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    total = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p in pos for n in neg)
    return total / (len(pos) * len(neg))
