"""
Task distributions p(T): sinusoid regression and synthetic N-way k-shot classification.

All randomness comes from :func:`stream_rng`, a numpy ``Generator`` (PCG64) seeded from a
``SeedSequence`` over ``(root seed, stream id, *indices)``. Every sample is therefore a pure
function of the seed and its indices, and separate streams never perturb each other.
"""

import csv
import logging
import math
from dataclasses import dataclass, replace
from typing import Callable, Iterator, List, Tuple

import numpy as np

from l2f.exceptions import ConfigurationError
from l2f.schema import Distribution

logger = logging.getLogger(__name__)

Interval = Tuple[float, float]

STREAMS = {
    'init': 0,
    'attenuator': 1,
    'tasks': 2,
    'eval': 3,
    'validation': 4,
    'diagnostics': 5,
}

INPUT_RANGE = (-5.0, 5.0)


def stream_rng(seed: int, stream: str, *indices: int) -> np.random.Generator:
    """
    Independent generator for a named stream.

    :param seed: root seed
    :param stream: stream name, one of ``STREAMS``
    :param indices: further non-negative integers (iteration, curve, repeat, ...)
    """
    return np.random.default_rng(np.random.SeedSequence([int(seed), STREAMS[stream], *map(int, indices)]))


def derive_seed(seed: int, stream: str) -> int:
    """Integer seed for consumers that take a plain seed (parameter initialization)."""
    return int(np.random.SeedSequence([int(seed), STREAMS[stream]]).generate_state(1)[0])


def _check_interval(name: str, interval: Interval) -> None:
    low, high = interval
    if not (math.isfinite(low) and math.isfinite(high)) or low > high:
        raise ConfigurationError(name, f'empty or invalid interval [{low}, {high}]')


@dataclass(frozen=True)
class Task:
    """A sampled task: support set D and query set D'."""
    support_x: np.ndarray
    support_y: np.ndarray
    query_x: np.ndarray
    query_y: np.ndarray

    @property
    def support(self) -> Tuple[np.ndarray, np.ndarray]:
        return self.support_x, self.support_y

    @property
    def query(self) -> Tuple[np.ndarray, np.ndarray]:
        return self.query_x, self.query_y


@dataclass(frozen=True)
class SinusoidTask(Task):
    amplitude: float = 1.0
    frequency: float = 1.0
    phase: float = 0.0

    def target(self, x: np.ndarray) -> np.ndarray:
        return self.amplitude * np.sin(self.frequency * x + self.phase)


@dataclass(frozen=True)
class SyntheticClassTask(Task):
    centroids: np.ndarray = None
    sigma: float = 0.0


@dataclass(frozen=True)
class DistributionSpec:
    """
    Sinusoid task distribution: closed intervals for amplitude, frequency and phase, plus
    support size ``k`` and query size ``m``.
    """
    amplitude: Interval = (0.1, 5.0)
    frequency: Interval = (0.8, 1.2)
    phase: Interval = (0.0, math.pi)
    k: int = 5
    m: int = 5

    def validate(self) -> 'DistributionSpec':
        _check_interval('amplitude', self.amplitude)
        _check_interval('frequency', self.frequency)
        _check_interval('phase', self.phase)
        if self.k < 1:
            raise ConfigurationError('k', f'must be at least 1, got {self.k}')
        if self.m < 1:
            raise ConfigurationError('m', f'must be at least 1, got {self.m}')
        return self

    def with_shots(self, k: int, m: int = None) -> 'DistributionSpec':
        return replace(self, k=k, m=k if m is None else m)


STANDARD = DistributionSpec()
NON_OVERLAPPED_TRAIN = DistributionSpec(amplitude=(0.1, 3.0), frequency=(0.8, 1.0), phase=(0.0, math.pi / 2))
NON_OVERLAPPED_EVAL = DistributionSpec(amplitude=(3.0, 5.0), frequency=(1.0, 1.2), phase=(math.pi / 2, math.pi))


def distribution_pair(distribution: Distribution, k: int, m: int = None) -> Tuple[DistributionSpec, DistributionSpec]:
    """Training and evaluation specs of a named distribution preset."""
    distribution = Distribution.parse(distribution)
    if distribution is Distribution.NON_OVERLAPPED:
        return NON_OVERLAPPED_TRAIN.with_shots(k, m), NON_OVERLAPPED_EVAL.with_shots(k, m)
    return STANDARD.with_shots(k, m), STANDARD.with_shots(k, m)


@dataclass(frozen=True)
class ClassificationSpec:
    """N-way k-shot Gaussian-cluster classification tasks."""
    n_way: int = 5
    k: int = 5
    m: int = 5
    dim: int = 8
    sigma: float = 0.05

    def validate(self) -> 'ClassificationSpec':
        if self.n_way < 2:
            raise ConfigurationError('n_way', f'must be at least 2, got {self.n_way}')
        if self.k < 1:
            raise ConfigurationError('k', f'must be at least 1, got {self.k}')
        if self.m < 1:
            raise ConfigurationError('m', f'must be at least 1, got {self.m}')
        if self.dim < 1:
            raise ConfigurationError('dim', f'must be at least 1, got {self.dim}')
        if not self.sigma >= 0:
            raise ConfigurationError('sigma', f'must be non-negative, got {self.sigma}')
        return self


def _draw_inputs(rng: np.random.Generator, count: int) -> np.ndarray:
    return rng.uniform(INPUT_RANGE[0], INPUT_RANGE[1], size=(count, 1))


def draw_sinusoid_generator(spec: DistributionSpec, rng: np.random.Generator) -> Tuple[float, float, float]:
    amplitude = float(rng.uniform(*spec.amplitude))
    frequency = float(rng.uniform(*spec.frequency))
    phase = float(rng.uniform(*spec.phase))
    return amplitude, frequency, phase


def make_sinusoid_task(amplitude: float, frequency: float, phase: float, rng: np.random.Generator,
                       k: int, m: int) -> SinusoidTask:
    """Sinusoid task with fixed generator parameters and freshly drawn support and query inputs."""
    support_x = _draw_inputs(rng, k)
    query_x = _draw_inputs(rng, m)
    return SinusoidTask(
        support_x=support_x,
        support_y=amplitude * np.sin(frequency * support_x + phase),
        query_x=query_x,
        query_y=amplitude * np.sin(frequency * query_x + phase),
        amplitude=amplitude,
        frequency=frequency,
        phase=phase,
    )


def sample_sinusoid(spec: DistributionSpec, rng: np.random.Generator) -> SinusoidTask:
    """
    Sample a sinusoid task ``y = A sin(omega x + b)``.

    :param spec: parameter intervals and set sizes
    :param rng: numpy generator
    """
    spec.validate()
    amplitude, frequency, phase = draw_sinusoid_generator(spec, rng)
    return make_sinusoid_task(amplitude, frequency, phase, rng, spec.k, spec.m)


def draw_centroids(spec: ClassificationSpec, rng: np.random.Generator) -> np.ndarray:
    return rng.uniform(-1.0, 1.0, size=(spec.n_way, spec.dim))


def make_classification_task(centroids: np.ndarray, rng: np.random.Generator, k: int, m: int,
                             sigma: float) -> SyntheticClassTask:
    n_way, dim = centroids.shape
    support_y = np.repeat(np.arange(n_way), k)
    query_y = np.repeat(np.arange(n_way), m)
    support_x = centroids[support_y] + sigma * rng.standard_normal((n_way * k, dim))
    query_x = centroids[query_y] + sigma * rng.standard_normal((n_way * m, dim))
    return SyntheticClassTask(support_x=support_x, support_y=support_y, query_x=query_x, query_y=query_y,
                              centroids=centroids, sigma=sigma)


def sample_classification(n_way: int, k: int, m: int, dim: int, sigma: float,
                          rng: np.random.Generator) -> SyntheticClassTask:
    """
    Sample an N-way task: centroids uniform in ``[-1, 1]^d``, points centroid + N(0, sigma^2 I).
    """
    spec = ClassificationSpec(n_way, k, m, dim, sigma).validate()
    return make_classification_task(draw_centroids(spec, rng), rng, k, m, sigma)


class TaskSampler:
    """
    Training task batches as a pure function of ``(seed, iteration)``.

    :param spec: :class:`DistributionSpec` or :class:`ClassificationSpec`
    :param seed: root seed
    :param stream: named random stream
    """

    def __init__(self, spec, seed: int, stream: str = 'tasks'):
        self.spec = spec.validate()
        self.seed = seed
        self.stream = stream

    def sample(self, rng: np.random.Generator):
        if isinstance(self.spec, ClassificationSpec):
            return make_classification_task(draw_centroids(self.spec, rng), rng, self.spec.k, self.spec.m,
                                            self.spec.sigma)
        return sample_sinusoid(self.spec, rng)

    def __call__(self, iteration: int, batch_size: int) -> List[Task]:
        rng = stream_rng(self.seed, self.stream, iteration)
        return [self.sample(rng) for _ in range(batch_size)]


@dataclass(frozen=True)
class EvalSample:
    task: Task
    curve: int
    repeat: int

    @property
    def task_id(self) -> int:
        return self.curve * 1_000_000 + self.repeat


def eval_protocol(spec, seed: int, curves: int = 100, repeats: int = 100, query_size: int = 100,
                  stream: str = 'eval') -> Iterator[EvalSample]:
    """
    Evaluation stream: ``curves`` task generators, each evaluated ``repeats`` times with a fresh
    support set of ``spec.k`` points and a fresh query set of ``query_size`` points.

    For classification the generator is a set of class centroids and ``query_size`` is per class.
    """
    spec.validate()
    for curve in range(curves):
        curve_rng = stream_rng(seed, stream, curve)
        if isinstance(spec, ClassificationSpec):
            centroids = draw_centroids(spec, curve_rng)
        else:
            generator = draw_sinusoid_generator(spec, curve_rng)
        for repeat in range(repeats):
            rng = stream_rng(seed, stream, curve, repeat + 1)
            if isinstance(spec, ClassificationSpec):
                task = make_classification_task(centroids, rng, spec.k, query_size, spec.sigma)
            else:
                task = make_sinusoid_task(*generator, rng, spec.k, query_size)
            yield EvalSample(task, curve, repeat)


def stream_factory(spec, seed: int, curves: int, repeats: int, query_size: int,
                   stream: str = 'eval') -> Callable[[], Iterator[EvalSample]]:
    """Re-iterable evaluation stream, e.g. for repeated evaluations in a sweep."""
    return lambda: eval_protocol(spec, seed, curves, repeats, query_size, stream)


DUMP_HEADER = ['task_id', 'amplitude', 'frequency', 'phase', 'set', 'x', 'y']


def dump_tasks(path: str, tasks) -> int:
    """
    Write sinusoid tasks as CSV rows ``(task_id, A, omega, b, set, x, y)``.

    :return: number of data rows written
    """
    rows = 0
    with open(path, 'w', newline='') as handle:
        writer = csv.writer(handle)
        writer.writerow(DUMP_HEADER)
        for task_id, task in enumerate(tasks):
            for name, (xs, ys) in (('support', task.support), ('query', task.query)):
                for x, y in zip(np.ravel(xs), np.ravel(ys)):
                    writer.writerow([task_id, repr(task.amplitude), repr(task.frequency), repr(task.phase),
                                     name, repr(float(x)), repr(float(y))])
                    rows += 1
    logger.debug('Dumped %d tasks (%d rows) to %s', task_id + 1 if rows else 0, rows, path)
    return rows
