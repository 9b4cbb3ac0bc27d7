import numpy as np
import pytest
import torch

from advaug.datasets import LabeledSet, prepare_sets
from advaug.training import Seeds, TrainConfig


def toy_images(n_per_class=4, classes=10, size=28, channels=1, seed=0):
    """Synthetic uint8 digits: each class lights a different horizontal band."""
    rng = np.random.default_rng(seed)
    images, labels = [], []
    for c in range(classes):
        for _ in range(n_per_class):
            img = rng.integers(0, 40, size=(channels, size, size))
            row = 2 + 2 * c
            img[:, row:row + 3, 4:size - 4] = 200 + rng.integers(0, 55)
            images.append(img)
            labels.append(c)
    return np.asarray(images, dtype=np.uint8), np.asarray(labels)


@pytest.fixture
def toy_data():
    x, y = toy_images(n_per_class=4, seed=0)
    xt, yt = toy_images(n_per_class=2, seed=1)
    return prepare_sets(LabeledSet(x, y), LabeledSet(x[:0], y[:0]), LabeledSet(xt, yt))


def small_config(**kw):
    base = dict(dataset="mnist", channels=1, m=8, n_iter=1, width=0.125,
                seeds=Seeds(init=11, data=12, noise=13, dropout=14))
    base.update(kw)
    return TrainConfig(**base)


@pytest.fixture(autouse=True)
def _torch_threads():
    torch.set_num_threads(1)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
