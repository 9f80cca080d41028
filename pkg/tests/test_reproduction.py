"""
Reduced-scale training runs. Tens of minutes each; run with ``pytest -m slow``.

The sinusoid comparisons train for ``ITERATIONS`` outer steps, a fifth of the 50 000-step
default. At this scale the comparison is a vote over five seeds, since a single seed can
still put MAML ahead of L2F at some step count (seed 1 did at 10 000 steps). The per-seed
ordering is only expected from full-length runs, e.g. ``L2F_REPRODUCTION_ITERATIONS=50000 pytest -m slow``.
"""

import os

import numpy as np
import pytest

from l2f.config import TaskConfig
from l2f.meta import MetaConfig, MetaLearner
from l2f.models import REGRESSION_SIZES
from l2f.schema import Method, Scope
from l2f.tasks import TaskSampler, eval_protocol

pytestmark = pytest.mark.slow

SEEDS = (0, 1, 2, 3, 4)
ITERATIONS = int(os.environ.get('L2F_REPRODUCTION_ITERATIONS', 10_000))


def _train_and_evaluate(method, seed, tasks: TaskConfig, iterations, **meta):
    config = MetaConfig(method=method, seed=seed, iterations=iterations, progress=False, **meta)
    learner = MetaLearner.initialize(config, tasks.network_sizes(), tasks.head)
    train_spec, eval_spec = tasks.specs()
    learner.meta_train(TaskSampler(train_spec, seed))
    return learner.evaluate(eval_protocol(eval_spec, seed), publish=False)


def test_identity_attenuation_matches_maml_for_100_iterations():
    sampler = TaskSampler(TaskConfig().specs()[0], 0)
    maml = MetaLearner.initialize(MetaConfig(method=Method.MAML, iterations=100, progress=False), REGRESSION_SIZES)
    l2f = MetaLearner.initialize(MetaConfig(method=Method.L2F, gamma_identity=True, iterations=100, progress=False),
                                 REGRESSION_SIZES)
    maml.meta_train(sampler)
    l2f.meta_train(sampler)
    for a, b in zip(maml.network.params.nodes(), l2f.network.params.nodes()):
        assert np.max(np.abs(a.value - b.value)) <= 1e-10


def test_l2f_beats_maml_on_sinusoids():
    tasks = TaskConfig(k=5)
    wins = {steps: 0 for steps in (1, 2, 5)}
    for seed in SEEDS:
        maml = _train_and_evaluate(Method.MAML, seed, tasks, ITERATIONS)
        l2f = _train_and_evaluate(Method.L2F, seed, tasks, ITERATIONS)
        for steps in wins:
            wins[steps] += l2f.row(steps).mean < maml.row(steps).mean
    assert all(count >= 4 for count in wins.values()), wins


def test_l2f_generalizes_to_non_overlapped_tasks():
    tasks = TaskConfig(distribution='non-overlapped', k=5)
    wins = 0
    for seed in SEEDS:
        maml = _train_and_evaluate(Method.MAML, seed, tasks, ITERATIONS)
        l2f = _train_and_evaluate(Method.L2F, seed, tasks, ITERATIONS)
        wins += l2f.row(5).mean < maml.row(5).mean
    assert wins >= 4


def test_classification_smoke():
    tasks = TaskConfig(family='classification', k=5, n_way=5, sigma=0.05)
    common = dict(inner_steps_train=5, inner_steps_eval=(5,), inner_lr=0.1)
    for method in (Method.MAML, Method.L2F):
        table = _train_and_evaluate(method, 0, tasks, 2_000, **common)
        assert table.row(5).mean > 0.9

    accuracy = {}
    for scope in (Scope.PARAMETER, Scope.FILTER, Scope.LAYER, Scope.NETWORK):
        table = _train_and_evaluate(Method.LEARNED_SCOPE, 0, tasks, 500, scope=scope, **common)
        accuracy[scope.value] = table.row(5).mean
    assert all(0.0 <= value <= 1.0 for value in accuracy.values())
    print('learned-scope accuracy', accuracy)
