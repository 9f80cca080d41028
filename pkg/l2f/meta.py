"""
MAML inner and outer loops and the attenuated (L2F) variant.

One outer step samples a batch of tasks, attenuates the initialization per task (L2F and its
ablations), adapts it on each support set, sums the query losses in task order and applies a
single Adam update to the joint parameter list ``(theta, phi)``.
"""

import logging
import math
import time
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from reactivex.subject import Subject
from tqdm import tqdm

from l2f.autodiff import Node, add, expand, grad, mul, variable
from l2f.checkpoint import Checkpoint, save_checkpoint
from l2f.events import GammaRecord, IterationRecord
from l2f.exceptions import AdaptationError, ConfigurationError, DivergenceError, NumericalError, ShapeError
from l2f.models import (REGRESSION_SIZES, Attenuator, LayeredParams, LearnedAttenuation, ModulationParams,
                        TaskNetwork, init_attenuator, init_learned_attenuation, init_task_network,
                        layerwise_grad_mean, scale_filters, support_gradients)
from l2f.schema import GradSummary, Head, Method, Order, Scope, Transform
from l2f.tasks import EvalSample, Task, derive_seed

CONFIDENCE_Z = 1.96


@dataclass
class MetaConfig:
    """
    Meta-learning hyperparameters.

    :param inner_lr: inner-loop step size alpha
    :param meta_lr: Adam step size eta
    :param inner_steps_train: inner steps during meta-training
    :param inner_steps_eval: step counts reported by evaluation
    :param meta_batch_size: tasks per outer step
    :param order: second-order keeps the inner-loop graph, first-order detaches it
    :param method: maml, l2f, learned-scope or transform-variant
    :param scope: attenuation scope of the learned-scope method
    :param transform: attenuator output transform
    :param grad_summary: attenuator input, signed (default) or absolute layer-wise mean
    :param iterations: outer steps
    :param seed: root seed
    :param gamma_identity: force the attenuator to emit gamma == 1 and freeze it
    :param diagnostics_every: outer steps between diagnostics runs, 0 disables them
    :param validate_every: outer steps between meta-validation runs, 0 disables them
    """
    inner_lr: float = 0.01
    meta_lr: float = 1e-3
    inner_steps_train: int = 1
    inner_steps_eval: Tuple[int, ...] = (1, 2, 5)
    meta_batch_size: int = 4
    order: Order = Order.SECOND
    method: Method = Method.L2F
    scope: Scope = Scope.LAYER
    transform: Transform = Transform.SIGMOIDED_GAMMA
    grad_summary: GradSummary = GradSummary.SIGNED
    iterations: int = 50000
    seed: int = 0
    gamma_identity: bool = False
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8
    diagnostics_every: int = 0
    validate_every: int = 0
    progress: bool = True

    def __post_init__(self):
        self.order = Order.parse(self.order)
        self.method = Method.parse(self.method)
        self.scope = Scope.parse(self.scope)
        self.transform = Transform.parse(self.transform)
        self.grad_summary = GradSummary.parse(self.grad_summary)
        self.inner_steps_eval = tuple(int(s) for s in self.inner_steps_eval)

    @property
    def uses_attenuator(self) -> bool:
        return self.method in (Method.L2F, Method.TRANSFORM_VARIANT)

    def validate(self) -> 'MetaConfig':
        if not (math.isfinite(self.inner_lr) and self.inner_lr > 0):
            raise ConfigurationError('inner_lr', f'must be positive, got {self.inner_lr}')
        if not (math.isfinite(self.meta_lr) and self.meta_lr > 0):
            raise ConfigurationError('meta_lr', f'must be positive, got {self.meta_lr}')
        if self.inner_steps_train < 0:
            raise ConfigurationError('inner_steps_train', f'must be non-negative, got {self.inner_steps_train}')
        if not self.inner_steps_eval:
            raise ConfigurationError('inner_steps_eval', 'must list at least one step count')
        if any(s < 0 for s in self.inner_steps_eval):
            raise ConfigurationError('inner_steps_eval', f'step counts must be non-negative, got {list(self.inner_steps_eval)}')
        if self.meta_batch_size < 1:
            raise ConfigurationError('meta_batch_size', f'must be at least 1, got {self.meta_batch_size}')
        if self.iterations < 0:
            raise ConfigurationError('iterations', f'must be non-negative, got {self.iterations}')
        if self.diagnostics_every < 0:
            raise ConfigurationError('diagnostics_every', 'must be non-negative')
        if self.validate_every < 0:
            raise ConfigurationError('validate_every', 'must be non-negative')
        if not 0 <= self.adam_beta1 < 1 or not 0 <= self.adam_beta2 < 1:
            raise ConfigurationError('adam_beta1', 'Adam decay rates must lie in [0, 1)')
        if self.adam_epsilon <= 0:
            raise ConfigurationError('adam_epsilon', 'must be positive')
        if self.method is Method.L2F and self.transform is not Transform.SIGMOIDED_GAMMA:
            raise ConfigurationError('transform', f'l2f uses sigmoided-gamma, use method transform-variant '
                                                  f'for {self.transform.value}')
        if self.gamma_identity and not self.uses_attenuator:
            raise ConfigurationError('gamma_identity', f'requires an attenuator, method {self.method.value} has none')
        return self


@dataclass
class AdaptedParams:
    """
    Result of an inner loop.

    :param params: adapted parameters theta', graph nodes rooted at the initialization
    :param losses: support loss before every step and after the last one
    :param gamma: attenuation used to build the starting point, if any
    """
    params: LayeredParams
    losses: List[float] = field(default_factory=list)
    gamma: Optional[ModulationParams] = None


def _check_group(j: int, gamma: Node, shape: tuple) -> None:
    if gamma.shape != shape:
        raise ShapeError(f'attenuate layer {j}', gamma.shape, shape)


def attenuate(theta: LayeredParams, gamma: ModulationParams) -> LayeredParams:
    """
    Attenuated initialization, ``gamma^j * theta^j`` (``+ delta^j`` for the affine transform).

    :param theta: initialization
    :param gamma: attenuation whose granularity matches its scope
    :return: parameters differentiable with respect to ``theta`` and ``gamma``
    """
    l = theta.layer_count
    if gamma.scope is Scope.NONE:
        return theta
    expected = 1 if gamma.scope is Scope.NETWORK else l
    if len(gamma.gammas) != expected:
        raise ShapeError('attenuate', (len(gamma.gammas),), (expected,))
    if gamma.deltas is not None and len(gamma.deltas) != l:
        raise ShapeError('attenuate', (len(gamma.deltas),), (l,))

    layers = []
    for j, (weight, bias) in enumerate(theta.layers):
        if gamma.scope is Scope.NETWORK:
            _check_group(j, gamma.gammas[0], ())
            weight, bias = mul(weight, gamma.gammas[0]), mul(bias, gamma.gammas[0])
        elif gamma.scope is Scope.LAYER:
            _check_group(j, gamma.gammas[j], ())
            weight, bias = mul(weight, gamma.gammas[j]), mul(bias, gamma.gammas[j])
        elif gamma.scope is Scope.FILTER:
            _check_group(j, gamma.gammas[j], bias.shape)
            weight, bias = scale_filters(weight, gamma.gammas[j]), mul(bias, gamma.gammas[j])
        else:
            weight_gamma, bias_gamma = gamma.gammas[j]
            _check_group(j, weight_gamma, weight.shape)
            _check_group(j, bias_gamma, bias.shape)
            weight, bias = mul(weight, weight_gamma), mul(bias, bias_gamma)
        if gamma.deltas is not None:
            delta = gamma.deltas[j]
            weight, bias = add(weight, expand(delta, weight.shape)), add(bias, expand(delta, bias.shape))
        layers.append((weight, bias))
    return LayeredParams(tuple(layers))


def inner_adapt(network: TaskNetwork, theta_start: LayeredParams, support: Tuple[np.ndarray, np.ndarray],
                steps: int, inner_lr: float, order: Order = Order.SECOND) -> AdaptedParams:
    """
    Full-batch gradient descent on the support loss.

    :param network: task network
    :param theta_start: starting point (theta or an attenuated theta)
    :param support: support inputs and targets
    :param steps: number of gradient steps
    :param inner_lr: step size alpha
    :param order: second-order keeps the graph through each step
    """
    if steps < 0:
        raise ConfigurationError('inner_steps', f'must be non-negative, got {steps}')
    order = Order.parse(order)
    x, y = support
    params = theta_start
    losses = []
    for step in range(steps + 1):
        try:
            loss = network.loss(params, x, y)
            losses.append(float(loss.value))
            if step == steps:
                break
            grads = grad(loss, params.nodes(), create_graph=order is Order.SECOND)
            params = params.step(grads, inner_lr)
        except NumericalError as e:
            raise AdaptationError(step, float('nan')) from e
    return AdaptedParams(params, losses)


def task_modulation(config: MetaConfig, network: TaskNetwork, theta: LayeredParams,
                    support: Tuple[np.ndarray, np.ndarray], attenuator: Attenuator = None,
                    attenuation: LearnedAttenuation = None, create_graph: bool = None) -> Optional[ModulationParams]:
    """
    Attenuation for one task: generated from the support gradient at ``theta`` (l2f and the
    transform variants), the learned task-independent attenuation (learned-scope) or none (maml).
    """
    if config.method is Method.MAML:
        return None
    if config.method is Method.LEARNED_SCOPE:
        if attenuation is None:
            raise ConfigurationError('attenuation', 'learned-scope needs a learned attenuation')
        return attenuation.modulation()
    if attenuator is None:
        raise ConfigurationError('attenuator', f'method {config.method.value} needs an attenuator')
    if create_graph is None:
        create_graph = config.order is Order.SECOND
    grads = support_gradients(network, theta, *support, create_graph=create_graph)
    return attenuator.generate_gamma(layerwise_grad_mean(grads, config.grad_summary))


@dataclass
class MetaBatch:
    """Summed query loss of a task batch and the per-task adaptations behind it."""
    loss: Node
    adapted: List[AdaptedParams]

    @property
    def modulations(self) -> List[Optional[ModulationParams]]:
        return [a.gamma for a in self.adapted]


def meta_batch(config: MetaConfig, network: TaskNetwork, tasks: Sequence[Task], attenuator: Attenuator = None,
               attenuation: LearnedAttenuation = None) -> MetaBatch:
    """
    Outer objective over a batch: the sum over tasks of the query loss at ``theta'_i``.

    Tasks are processed in order and their losses summed in that order.
    """
    if not tasks:
        raise ConfigurationError('meta_batch_size', 'task batch is empty')
    theta = network.params
    total = None
    adapted = []
    for i, task in enumerate(tasks):
        try:
            try:
                modulation = task_modulation(config, network, theta, task.support, attenuator, attenuation)
            except NumericalError as e:
                raise AdaptationError(0, float('nan')) from e
            start = attenuate(theta, modulation) if modulation is not None else theta
            result = inner_adapt(network, start, task.support, config.inner_steps_train, config.inner_lr,
                                 config.order)
        except AdaptationError as e:
            raise e.for_task(i) from e
        query_loss = network.loss(result.params, *task.query)
        total = query_loss if total is None else add(total, query_loss)
        adapted.append(replace(result, gamma=modulation))
    return MetaBatch(total, adapted)


def meta_loss(config: MetaConfig, network: TaskNetwork, tasks: Sequence[Task], attenuator: Attenuator = None,
              attenuation: LearnedAttenuation = None) -> Node:
    """Summed query loss, differentiable with respect to theta, phi and any learned attenuation."""
    return meta_batch(config, network, tasks, attenuator, attenuation).loss


class Adam:
    """
    Adam over a fixed list of arrays.

    :param shapes: shape of every parameter, in update order
    :param learning_rate: step size
    """

    def __init__(self, shapes: Sequence[tuple], learning_rate: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, epsilon: float = 1e-8):
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.t = 0
        self.m = [np.zeros(s) for s in shapes]
        self.v = [np.zeros(s) for s in shapes]

    def step(self, values: Sequence[np.ndarray], grads: Sequence[np.ndarray]) -> List[np.ndarray]:
        """Return the updated values; the inputs are not modified."""
        if len(values) != len(self.m) or len(grads) != len(self.m):
            raise ShapeError('Adam.step', (len(values),), (len(self.m),))
        self.t += 1
        bias1 = 1.0 - self.beta1 ** self.t
        bias2 = 1.0 - self.beta2 ** self.t
        updated = []
        for i, (value, g) in enumerate(zip(values, grads)):
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g
            m_hat = self.m[i] / bias1
            v_hat = self.v[i] / bias2
            updated.append(value - self.learning_rate * m_hat / (np.sqrt(v_hat) + self.epsilon))
        return updated


@dataclass(frozen=True)
class EvaluationRow:
    steps: int
    mean: float
    ci95: float
    count: int


@dataclass
class EvaluationTable:
    """One row per evaluated step count; ``metric`` is ``mse`` or ``accuracy``."""
    metric: str
    rows: List[EvaluationRow]

    def row(self, steps: int) -> EvaluationRow:
        for row in self.rows:
            if row.steps == steps:
                return row
        raise KeyError(steps)

    def format(self) -> str:
        lines = [f'{"steps":>6}  {self.metric:>12}  {"95% ci":>10}  {"n":>6}']
        for row in self.rows:
            lines.append(f'{row.steps:>6}  {row.mean:>12.6f}  {row.ci95:>10.6f}  {row.count:>6}')
        return '\n'.join(lines)


def summarize(values: Sequence[float]) -> Tuple[float, float]:
    """Mean and 95% confidence half-width ``1.96 * std / sqrt(n)``."""
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        return float('nan'), float('nan')
    if values.size == 1:
        return float(values[0]), 0.0
    return float(np.mean(values)), float(CONFIDENCE_Z * np.std(values, ddof=1) / np.sqrt(values.size))


class MetaLearner:
    """
    Owns the meta-parameters and drives meta-training and evaluation.

    :param network: task network holding theta
    :param config: meta-learning configuration
    :param attenuator: attenuator g_phi for l2f and the transform variants
    :param attenuation: learned task-independent attenuation for the learned-scope method
    :param debug: log at DEBUG level
    """

    def __init__(self, network: TaskNetwork, config: MetaConfig, attenuator: Attenuator = None,
                 attenuation: LearnedAttenuation = None, debug: bool = False):
        self.config = config.validate()
        self.network = network
        self.attenuator = attenuator
        self.attenuation = attenuation
        self.iteration = 0

        self.logger = logging.getLogger('l2f.meta')
        if debug:
            self.logger.setLevel(logging.DEBUG)

        if config.uses_attenuator and attenuator is None:
            raise ConfigurationError('attenuator', f'method {config.method.value} needs an attenuator')
        if config.method is Method.LEARNED_SCOPE and attenuation is None:
            raise ConfigurationError('attenuation', 'learned-scope needs a learned attenuation')

        self.events = Subject()
        self.gammas = Subject()
        self.optimizer = Adam([n.shape for n in self.trainable()], config.meta_lr, config.adam_beta1,
                              config.adam_beta2, config.adam_epsilon)

    @classmethod
    def initialize(cls, config: MetaConfig, sizes: Sequence[int] = REGRESSION_SIZES,
                   head: Head = Head.REGRESSION, debug: bool = False) -> 'MetaLearner':
        """Fresh learner with parameters drawn from the ``init`` and ``attenuator`` seed streams."""
        config.validate()
        network = init_task_network(derive_seed(config.seed, 'init'), sizes, head)
        attenuator = None
        attenuation = None
        if config.uses_attenuator:
            attenuator = init_attenuator(derive_seed(config.seed, 'attenuator'), network.layer_count,
                                         config.transform)
            if config.gamma_identity:
                attenuator = attenuator.force_identity()
        if config.method is Method.LEARNED_SCOPE:
            attenuation = init_learned_attenuation(network.params, config.scope)
        return cls(network, config, attenuator, attenuation, debug)

    @classmethod
    def from_checkpoint(cls, checkpoint: Checkpoint, config: MetaConfig, debug: bool = False) -> 'MetaLearner':
        attenuator = checkpoint.attenuator
        if attenuator is not None and config.gamma_identity:
            attenuator = attenuator.force_identity()
        return cls(checkpoint.network, config, attenuator, checkpoint.attenuation, debug)

    def trainable(self) -> List[Node]:
        """Joint parameter list updated by the outer loop, theta first."""
        nodes = self.network.params.nodes()
        if self.attenuator is not None and not self.config.gamma_identity:
            nodes += self.attenuator.params.nodes()
        if self.attenuation is not None:
            nodes += self.attenuation.nodes()
        return nodes

    def _assign(self, values: List[np.ndarray]) -> None:
        theta_count = len(self.network.params.nodes())
        self.network.params = LayeredParams.from_nodes([variable(v) for v in values[:theta_count]])
        rest = values[theta_count:]
        if self.attenuator is not None and not self.config.gamma_identity:
            phi_count = len(self.attenuator.params.nodes())
            self.attenuator = Attenuator(LayeredParams.from_nodes([variable(v) for v in rest[:phi_count]]),
                                         self.attenuator.transform, self.attenuator.layer_count)
            rest = rest[phi_count:]
        if self.attenuation is not None:
            self.attenuation = self.attenuation.with_nodes([variable(v) for v in rest])

    def state(self) -> Checkpoint:
        return Checkpoint(self.network, self.attenuator, self.attenuation)

    def load_state(self, checkpoint: Checkpoint) -> None:
        """Replace the meta-parameters; the optimizer state is reset."""
        self.network = checkpoint.network
        self.attenuator = checkpoint.attenuator
        if self.attenuator is not None and self.config.gamma_identity:
            self.attenuator = self.attenuator.force_identity()
        self.attenuation = checkpoint.attenuation
        self.optimizer = Adam([n.shape for n in self.trainable()], self.config.meta_lr, self.config.adam_beta1,
                              self.config.adam_beta2, self.config.adam_epsilon)

    def save(self, path: str) -> str:
        return save_checkpoint(path, self.network, self.attenuator, self.attenuation)

    def batch(self, tasks: Sequence[Task]) -> MetaBatch:
        return meta_batch(self.config, self.network, tasks, self.attenuator, self.attenuation)

    def meta_train(self, sampler: Callable[[int, int], List[Task]], iterations: int = None,
                   checkpoint_path: str = None,
                   validation: Callable[[], Iterable[EvalSample]] = None) -> List[IterationRecord]:
        """
        Run outer steps, continuing from ``self.iteration``.

        :param sampler: callable ``(iteration, batch_size) -> tasks``, e.g. a :class:`~l2f.tasks.TaskSampler`
        :param iterations: outer steps to run, defaults to ``config.iterations``
        :param checkpoint_path: where to write the last finite state on divergence
        :param validation: factory of a meta-validation stream, run every ``config.validate_every`` steps
        :return: the records published on ``self.events``
        """
        iterations = self.config.iterations if iterations is None else iterations
        records = []
        start = time.perf_counter()
        first = self.iteration
        for iteration in tqdm(range(first, first + iterations), desc='meta-train', disable=not self.config.progress):
            tasks = sampler(iteration, self.config.meta_batch_size)
            trainable = self.trainable()
            try:
                batch = self.batch(tasks)
                outer_loss = float(batch.loss.value)
                grads = grad(batch.loss, trainable)
            except NumericalError as e:
                self._diverged(iteration, float('nan'), checkpoint_path, e)
            except AdaptationError as e:
                self._diverged(iteration, e.loss, checkpoint_path, e)

            values = self.optimizer.step([n.value for n in trainable], [g.value for g in grads])
            if not all(np.all(np.isfinite(v)) for v in values):
                self._diverged(iteration, outer_loss, checkpoint_path, None)
            self._assign(values)
            self.iteration = iteration + 1

            validation_metric = None
            if validation is not None and self.config.validate_every and self.iteration % self.config.validate_every == 0:
                validation_metric = self.evaluate(validation(), publish=False).rows[-1].mean
            record = self._record(iteration, outer_loss, batch, time.perf_counter() - start, validation_metric)
            self.logger.debug('iteration %d: outer loss %.6f', iteration, outer_loss)
            self._publish_gammas(iteration, 'train', range(len(tasks)), batch.modulations)
            records.append(record)
            self.events.on_next(record)
        return records

    def _diverged(self, iteration: int, loss: float, checkpoint_path: Optional[str], cause: Optional[Exception]):
        written = self.save(checkpoint_path) if checkpoint_path else None
        error = DivergenceError(iteration, loss, written)
        self.logger.error('%s', error)
        self.events.on_error(error)
        self.gammas.on_error(error)
        raise error from cause

    def _record(self, iteration: int, outer_loss: float, batch: MetaBatch, wall_time: float,
                validation_metric: Optional[float]) -> IterationRecord:
        l = self.network.layer_count
        per_task = [m.layer_values(l) for m in batch.modulations if m is not None]
        if not per_task:
            return IterationRecord(iteration, outer_loss, wall_time=wall_time, validation_metric=validation_metric)
        table = np.asarray(per_task)
        return IterationRecord(iteration, outer_loss,
                               gamma_mean=table.mean(axis=0).tolist(),
                               gamma_min=table.min(axis=0).tolist(),
                               gamma_max=table.max(axis=0).tolist(),
                               task_gammas=[list(row) for row in per_task],
                               wall_time=wall_time,
                               validation_metric=validation_metric)

    def _publish_gammas(self, iteration: int, phase: str, task_ids: Iterable[int],
                        modulations: Sequence[Optional[ModulationParams]]) -> None:
        if not self.config.uses_attenuator:
            return
        l = self.network.layer_count
        for task_id, modulation in zip(task_ids, modulations):
            if modulation is None:
                continue
            for layer, value in enumerate(modulation.layer_values(l)):
                self.gammas.on_next(GammaRecord(iteration, phase, task_id, layer, value))

    def modulation_for(self, support: Tuple[np.ndarray, np.ndarray]) -> Optional[ModulationParams]:
        return task_modulation(self.config, self.network, self.network.params, support, self.attenuator,
                               self.attenuation, create_graph=False)

    def evaluate_task(self, task: Task, steps: Sequence[int],
                      modulation: ModulationParams = None) -> Tuple[Dict[int, float], Optional[ModulationParams]]:
        """
        Query metric after each requested number of plain gradient steps.

        The initialization is attenuated once, before the first step. A given ``modulation``
        replaces the learner's own attenuation.
        """
        if modulation is None:
            modulation = self.modulation_for(task.support)
        start = self.network.params
        if modulation is not None:
            start = attenuate(start, modulation)
        params = LayeredParams.from_arrays(start.arrays())
        wanted = set(steps)
        last = max(wanted)
        results = {}
        for step in range(last + 1):
            if step in wanted:
                results[step] = self.network.metric(params, *task.query)
            if step == last:
                break
            try:
                loss = self.network.loss(params, *task.support)
                grads = grad(loss, params.nodes())
            except NumericalError as e:
                raise AdaptationError(step, float('nan')) from e
            arrays = [value - self.config.inner_lr * g.value for value, g in zip(_values(params), grads)]
            params = LayeredParams.from_nodes([variable(a) for a in arrays])
        return results, modulation

    def evaluate(self, samples: Iterable[EvalSample], steps: Sequence[int] = None,
                 modulation: ModulationParams = None, publish: bool = True) -> EvaluationTable:
        """
        Evaluate on a stream of tasks.

        :param samples: evaluation stream, see :func:`~l2f.tasks.eval_protocol`
        :param steps: step counts to report, defaults to ``config.inner_steps_eval``
        :param modulation: fixed attenuation applied to every task instead of the learner's own
        :param publish: publish generated gammas on ``self.gammas``
        :return: mean and 95% confidence half-width per step count
        """
        steps = sorted(set(self.config.inner_steps_eval if steps is None else steps))
        if not steps:
            raise ConfigurationError('inner_steps_eval', 'must list at least one step count')
        collected = {s: [] for s in steps}
        for sample in tqdm(samples, desc='evaluate', disable=not self.config.progress, leave=False):
            try:
                results, used = self.evaluate_task(sample.task, steps, modulation)
            except AdaptationError as e:
                raise e.for_task(sample.task_id) from e
            for s in steps:
                collected[s].append(results[s])
            if publish and modulation is None:
                self._publish_gammas(self.iteration, 'eval', [sample.task_id], [used])
        metric = 'accuracy' if self.network.head is Head.CLASSIFICATION else 'mse'
        rows = [EvaluationRow(s, *summarize(collected[s]), len(collected[s])) for s in steps]
        return EvaluationTable(metric, rows)

    def close(self):
        """Complete the event streams; observers flush and close their files."""
        self.events.on_completed()
        self.gammas.on_completed()


def _values(params: LayeredParams) -> List[np.ndarray]:
    return [n.value for n in params.nodes()]
