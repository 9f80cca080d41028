"""
Oracle suite behind ``l2f selftest``: finite-difference gradients, closed-form meta-gradients,
identity attenuation, conflict and landscape oracles, sampler ranges, determinism and the
range of generated gamma.
"""

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable, List, Tuple

import numpy as np

from l2f.autodiff import constant, exp, finite_difference_check, grad, matmul, mul, sigmoid, sin, sum_all
from l2f.diagnostics import degree_of_conflict, landscape_probe
from l2f.meta import MetaConfig, MetaLearner, meta_loss
from l2f.models import REGRESSION_SIZES, LayeredParams, TaskNetwork, init_attenuator, layerwise_grad_mean, pair_layers
from l2f.schema import Method, Order
from l2f.tasks import (NON_OVERLAPPED_EVAL, NON_OVERLAPPED_TRAIN, STANDARD, SinusoidTask, Task, TaskSampler,
                       draw_sinusoid_generator, eval_protocol, sample_sinusoid, stream_rng)

logger = logging.getLogger(__name__)

SEED = 20240
IDENTITY_ITERATIONS = 100
SAMPLER_DRAWS = 35_000
GAMMA_DRAWS = 1000


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float


@dataclass
class SelfTestReport:
    results: List[CheckResult] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results)

    def format(self) -> str:
        width = max(len(r.name) for r in self.results)
        lines = [f'{"check":<{width}}  status  {"seconds":>8}  detail']
        for r in self.results:
            lines.append(f'{r.name:<{width}}  {"PASS" if r.passed else "FAIL":<6}  {r.seconds:>8.3f}  {r.detail}')
        lines.append(f'{sum(r.passed for r in self.results)}/{len(self.results)} checks passed')
        return '\n'.join(lines)


def _scalar_network(theta: float) -> TaskNetwork:
    """One-parameter model: a [1, 1] network evaluated at x = 0, so the bias is the prediction."""
    params = LayeredParams.from_arrays([(np.zeros((1, 1)), np.array([theta]))])
    return TaskNetwork((1, 1), params)


def _scalar_task(support: float, query: float) -> Task:
    zero = np.zeros((1, 1))
    return Task(zero, np.array([[support]]), zero, np.array([[query]]))


def check_finite_differences() -> Tuple[bool, str]:
    rng = np.random.default_rng(SEED)
    a = rng.uniform(0.5, 1.5, size=(3, 4))
    b = rng.uniform(-1.0, 1.0, size=(4, 2))

    def f(a_, b_):
        z = matmul(a_, b_)
        return sum_all(mul(sin(z), sigmoid(z)) + exp(mul(z, constant(0.1))))

    error = finite_difference_check(f, [a, b])
    return error < 1e-4, f'max relative error {error:.2e}'


def check_meta_gradient() -> Tuple[bool, str]:
    rng = np.random.default_rng(SEED + 1)
    weight = rng.uniform(-1.0, 1.0, size=(1, 2))
    bias = rng.uniform(-1.0, 1.0, size=(1,))
    task = Task(rng.uniform(-1, 1, (4, 2)), rng.uniform(-1, 1, (4, 1)),
                rng.uniform(-1, 1, (4, 2)), rng.uniform(-1, 1, (4, 1)))
    config = MetaConfig(method=Method.MAML, inner_steps_train=2, inner_lr=0.1, order=Order.SECOND)

    def f(w, b):
        network = TaskNetwork((2, 1), LayeredParams(((w, b),)))
        return meta_loss(config, network, [task])

    error = finite_difference_check(f, [weight, bias])
    return error < 1e-4, f'3 parameters, 2 inner steps, max relative error {error:.2e}'


def check_scalar_closed_form() -> Tuple[bool, str]:
    rng = np.random.default_rng(SEED + 2)
    worst = 0.0
    for _ in range(100):
        theta, s, q = rng.uniform(-2.0, 2.0, size=3)
        alpha = float(rng.uniform(0.001, 0.2))
        network = _scalar_network(theta)
        config = MetaConfig(method=Method.MAML, inner_steps_train=1, inner_lr=alpha)
        loss = meta_loss(config, network, [_scalar_task(s, q)])
        engine = float(grad(loss, [network.params.layers[0][1]])[0].value[0])
        adapted = theta - 2.0 * alpha * (theta - s)
        expected = 2.0 * (adapted - q) * (1.0 - 2.0 * alpha)
        worst = max(worst, abs(engine - expected))
    return worst <= 1e-10, f'100 draws, max deviation {worst:.2e}'


def check_identity_attenuation() -> Tuple[bool, str]:
    common = dict(inner_steps_train=1, meta_batch_size=2, iterations=IDENTITY_ITERATIONS, seed=SEED, progress=False)
    maml = MetaLearner.initialize(MetaConfig(method=Method.MAML, **common), sizes=REGRESSION_SIZES)
    l2f = MetaLearner.initialize(MetaConfig(method=Method.L2F, gamma_identity=True, **common), sizes=REGRESSION_SIZES)
    sampler = TaskSampler(STANDARD, SEED)
    maml.meta_train(sampler)
    l2f.meta_train(sampler)
    deviation = max(float(np.max(np.abs(a - b))) for (wa, ba), (wb, bb) in
                    zip(maml.network.params.arrays(), l2f.network.params.arrays()) for a, b in ((wa, wb), (ba, bb)))
    return deviation <= 1e-10, f'{IDENTITY_ITERATIONS} outer steps, max deviation {deviation:.2e}'


def check_conflict_oracles() -> Tuple[bool, str]:
    rng = np.random.default_rng(SEED + 3)
    identical = degree_of_conflict([np.array([0.3, -1.2, 2.0])] * 3)
    orthogonal = degree_of_conflict([np.array([1.0, 0.0]), np.array([0.0, 1.0])])
    worst = 0.0
    for _ in range(1000):
        vectors = [rng.standard_normal(5) for _ in range(int(rng.integers(2, 6)))]
        direction = np.sum(vectors, axis=0)
        direction = direction / np.linalg.norm(direction)
        oracle = np.mean([abs(np.arccos(np.clip(v @ direction / np.linalg.norm(v), -1.0, 1.0))) for v in vectors])
        worst = max(worst, abs(degree_of_conflict(vectors) - oracle))
    passed = abs(identical) <= 1e-9 and abs(orthogonal - math.pi / 4) <= 1e-9 and worst <= 1e-9
    return passed, f'identical {identical:.1e}, orthogonal {orthogonal:.12f}, random max deviation {worst:.1e}'


def check_landscape_oracle() -> Tuple[bool, str]:
    theta = [np.array([1.0, -2.0, 0.5])]
    gradient = [2.0 * theta[0]]

    def loss_fn(nodes):
        return sum_all(mul(nodes[0], nodes[0]))

    record = landscape_probe(loss_fn, theta, gradient, [0.0025, 0.005, 0.01, 0.02, 0.04])
    deviation = abs(record.effective_beta - 2.0)
    return deviation <= 1e-9, f'quadratic, effective beta {record.effective_beta:.12f}'


def check_sampler_ranges() -> Tuple[bool, str]:
    rng = stream_rng(SEED, 'tasks')
    worst = 0.0
    for spec in (STANDARD, NON_OVERLAPPED_TRAIN, NON_OVERLAPPED_EVAL):
        draws = np.array([draw_sinusoid_generator(spec, rng) for _ in range(SAMPLER_DRAWS)])
        for column, (low, high) in enumerate((spec.amplitude, spec.frequency, spec.phase)):
            if draws[:, column].min() < low or draws[:, column].max() > high:
                return False, f'generator outside {spec}'
        for _ in range(2000):
            task: SinusoidTask = sample_sinusoid(spec, rng)
            if np.any(np.abs(task.support_x) > 5.0) or np.any(np.abs(task.query_x) > 5.0):
                return False, f'inputs outside [-5, 5] for {spec}'
            worst = max(worst, float(np.max(np.abs(task.support_y - task.target(task.support_x)))),
                        float(np.max(np.abs(task.query_y - task.target(task.query_x)))))
    return worst < 1e-12, (f'{3 * SAMPLER_DRAWS} generator draws inside their intervals, '
                           f'generator deviation {worst:.1e}')


def check_determinism() -> Tuple[bool, str]:
    first = [s.task.support_x for s in eval_protocol(STANDARD, SEED, curves=3, repeats=3, query_size=10)]
    second = [s.task.support_x for s in eval_protocol(STANDARD, SEED, curves=3, repeats=3, query_size=10)]
    streams_equal = all(np.array_equal(a, b) for a, b in zip(first, second))

    def trained():
        config = MetaConfig(method=Method.L2F, meta_batch_size=2, iterations=3, seed=SEED, progress=False)
        learner = MetaLearner.initialize(config, sizes=(1, 8, 8, 1))
        learner.meta_train(TaskSampler(STANDARD, SEED))
        return [n.value for n in learner.trainable()]

    runs_equal = all(np.array_equal(a, b) for a, b in zip(trained(), trained()))
    return streams_equal and runs_equal, f'eval stream identical: {streams_equal}, training identical: {runs_equal}'


def check_gamma_range() -> Tuple[bool, str]:
    rng = np.random.default_rng(SEED + 4)
    shapes = ((40, 1), (40,), (40, 40), (40,), (1, 40), (1,))
    low, high = 1.0, 0.0
    for i in range(GAMMA_DRAWS):
        attenuator = init_attenuator(SEED + i, 3)
        grads = pair_layers([constant(rng.standard_normal(s)) for s in shapes])
        values = attenuator.generate_gamma(layerwise_grad_mean(grads)).layer_values(3)
        low, high = min(low, min(values)), max(high, max(values))
    return 0.0 < low and high < 1.0, f'{GAMMA_DRAWS} attenuators, generated gamma within [{low:.4f}, {high:.4f}]'


CHECKS: List[Tuple[str, Callable[[], Tuple[bool, str]]]] = [
    ('autodiff finite differences', check_finite_differences),
    ('meta-gradient finite differences', check_meta_gradient),
    ('scalar MAML closed form', check_scalar_closed_form),
    ('identity attenuation', check_identity_attenuation),
    ('degree of conflict oracles', check_conflict_oracles),
    ('landscape quadratic oracle', check_landscape_oracle),
    ('sampler ranges', check_sampler_ranges),
    ('determinism', check_determinism),
    ('generated gamma range', check_gamma_range),
]


def run_selftest() -> SelfTestReport:
    report = SelfTestReport()
    for name, check in CHECKS:
        start = time.perf_counter()
        try:
            passed, detail = check()
        except Exception as e:  # pylint: disable=broad-except
            logger.exception('Check %s raised', name)
            passed, detail = False, f'{type(e).__name__}: {e}'
        report.results.append(CheckResult(name, passed, detail, time.perf_counter() - start))
        logger.debug('%s: %s', name, 'PASS' if passed else 'FAIL')
    return report
