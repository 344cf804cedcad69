import numpy as np
import pytest
import torch

from midas.data import DATASET_SPECS, DatasetSpec

torch.set_num_threads(1)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def soccer():
    return DATASET_SPECS["soccer"]


@pytest.fixture
def small_spec():
    """10 agents, 200 frames on a soccer-sized pitch."""
    return DatasetSpec("synthetic", 10, 10.0, 10.0, 200, (105.0, 68.0))


def random_walk(rng, K, T, dt=0.1, start=(50.0, 30.0), speed=2.0):
    v = rng.normal(0, speed, size=(K, T, 2))
    return np.asarray(start) + np.cumsum(v, axis=1) * dt


def pytest_terminal_summary(terminalreporter):
    import test_acceptance

    if test_acceptance.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(test_acceptance.RESULTS, key=lambda l: int(l.split("criterion")[1].split()[0])):
            terminalreporter.write_line(line)
