import numpy as np
import pytest

from grpolab.env import RewardSpec, Task
from grpolab.policy import PolicyParams, Vocab


def central_difference(f, x, h=1e-6):
    """Central finite-difference gradient of a scalar function of a flat vector."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    for i in range(len(x)):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def rel_error(a, b):
    return np.linalg.norm(a - b) / max(1.0, np.linalg.norm(a), np.linalg.norm(b))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def target_task():
    return Task(Vocab(3), 3, RewardSpec("target-sequence", target=(1, 2, 0)))


@pytest.fixture(scope="session")
def table_task():
    return Task(Vocab(3), 3, RewardSpec("random-table", seed=7))


@pytest.fixture(scope="session")
def tiny_task():
    return Task(Vocab(2), 2, RewardSpec("random-table", seed=3))


def random_params(task, rng, scale=1.0):
    return PolicyParams.random(task.space, rng, scale)
