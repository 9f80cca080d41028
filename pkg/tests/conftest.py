import numpy as np
import pytest

from l2f.meta import MetaConfig
from l2f.models import LayeredParams, TaskNetwork
from l2f.schema import Method
from l2f.tasks import Task

SMALL_SIZES = (1, 8, 8, 1)


def scalar_network(theta: float) -> TaskNetwork:
    """[1, 1] network queried at x = 0: the prediction is the bias."""
    return TaskNetwork((1, 1), LayeredParams.from_arrays([(np.zeros((1, 1)), np.array([theta]))]))


def scalar_task(support_target: float, query_target: float) -> Task:
    zero = np.zeros((1, 1))
    return Task(zero, np.array([[support_target]]), zero, np.array([[query_target]]))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_config():
    def make(**overrides):
        values = dict(method=Method.MAML, meta_batch_size=2, iterations=3, seed=7, progress=False)
        values.update(overrides)
        return MetaConfig(**values)
    return make
