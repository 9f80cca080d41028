"""
Analysis instruments: degree of conflict, optimization-landscape probes, manual gamma sweeps
and generated-gamma logging.

Every function here reads a snapshot of the meta-parameters and never updates them.
"""

import logging
import math
from dataclasses import dataclass, replace
from typing import Callable, Iterable, List, Optional, Sequence

import numpy as np
from reactivex import Observer

from l2f.autodiff import Node, grad, variable
from l2f.events import CsvObserver, GammaLogWriter, IterationRecord, every
from l2f.exceptions import ConfigurationError, DiagnosticsError, L2FException, NumericalError
from l2f.meta import MetaLearner, attenuate, meta_batch
from l2f.models import LayeredParams, layer_modulation
from l2f.schema import ConflictScope
from l2f.tasks import EvalSample, Task

logger = logging.getLogger(__name__)

PROBE_MULTIPLIERS = (0.25, 0.5, 1.0, 2.0, 4.0)


# DEGREE OF CONFLICT

@dataclass(frozen=True)
class ConflictMeasure:
    """Angles between each usable vector and the normalized sum, in radians."""
    angles: List[float]
    skipped: int

    @property
    def mean(self) -> float:
        return float(np.mean(self.angles))


def _angle(a: np.ndarray, b: np.ndarray) -> float:
    # half-angle form of arccos(a . b) for unit vectors, accurate near 0 and pi
    return 2.0 * math.atan2(np.linalg.norm(a - b), np.linalg.norm(a + b))


def conflict_angles(vectors: Sequence[np.ndarray]) -> ConflictMeasure:
    """
    Angle between every vector and the direction of their sum.

    Zero-norm vectors are skipped and counted in ``skipped``.

    :param vectors: flattened update directions ``u_i`` of equal length
    :raises DiagnosticsError: fewer than two usable vectors, or a zero sum
    """
    flat = [np.ravel(np.asarray(v, dtype=np.float64)) for v in vectors]
    if len({v.shape for v in flat}) > 1:
        raise DiagnosticsError(f'Vectors of different lengths: {sorted({v.size for v in flat})}')
    usable = [v for v in flat if np.linalg.norm(v) > 0.0]
    skipped = len(flat) - len(usable)
    if len(usable) < 2:
        raise DiagnosticsError(f'Degree of conflict needs at least 2 nonzero vectors, got {len(usable)}')
    total = np.sum(usable, axis=0)
    norm = np.linalg.norm(total)
    if norm == 0.0:
        raise DiagnosticsError('The vectors sum to zero, the batch direction is undefined')
    direction = total / norm
    angles = [_angle(v / np.linalg.norm(v), direction) for v in usable]
    return ConflictMeasure(angles, skipped)


def degree_of_conflict(vectors: Sequence[np.ndarray]) -> float:
    """
    Mean angle between each vector and the normalized sum of all vectors.

    :param vectors: flattened update directions
    :return: angle in ``[0, pi]``
    """
    measure = conflict_angles(vectors)
    if measure.skipped:
        logger.warning('Skipped %d zero-norm vectors in degree of conflict', measure.skipped)
    return measure.mean


def task_meta_gradients(learner: MetaLearner, tasks: Sequence[Task]) -> List[List[np.ndarray]]:
    """
    Per-task update directions ``u_i = -grad_theta L_query(f_theta'_i)``.

    :return: per task, one array per parameter node of theta (weight and bias of each layer)
    """
    theta = learner.network.params.nodes()
    directions = []
    for task in tasks:
        loss = meta_batch(learner.config, learner.network, [task], learner.attenuator, learner.attenuation).loss
        directions.append([-g.value for g in grad(loss, theta)])
    return directions


def _layer_slice(direction: List[np.ndarray], layer: int) -> np.ndarray:
    return np.concatenate([np.ravel(direction[2 * layer]), np.ravel(direction[2 * layer + 1])])


def _flatten(direction: List[np.ndarray]) -> np.ndarray:
    return np.concatenate([np.ravel(a) for a in direction])


def per_layer_conflict(directions: List[List[np.ndarray]]) -> ConflictMeasure:
    """One mean angle per layer, using only that layer's components of each ``u_i``."""
    layer_count = len(directions[0]) // 2
    means, skipped = [], 0
    for j in range(layer_count):
        measure = conflict_angles([_layer_slice(d, j) for d in directions])
        means.append(measure.mean)
        skipped += measure.skipped
    return ConflictMeasure(means, skipped)


def per_task_conflict(directions: List[List[np.ndarray]]) -> ConflictMeasure:
    return conflict_angles([_flatten(d) for d in directions])


def within_task_conflict(learner: MetaLearner, task: Task) -> ConflictMeasure:
    """
    Conflict between the per-example query gradients of one task at its adapted parameters.
    """
    adapted = meta_batch(learner.config, learner.network, [task], learner.attenuator,
                         learner.attenuation).adapted[0].params
    x, y = task.query
    directions = []
    for i in range(len(x)):
        params = LayeredParams.from_arrays(adapted.arrays())
        loss = learner.network.loss(params, x[i:i + 1], y[i:i + 1])
        directions.append(-_flatten([g.value for g in grad(loss, params.nodes())]))
    return conflict_angles(directions)


@dataclass(frozen=True)
class ConflictRecord:
    """
    Conflict measured over a window of ``window`` tasks.

    ``values`` holds one angle per layer (per-layer), a single angle (per-task) or one angle
    per task (within-task).
    """
    scope: ConflictScope
    iteration: int
    values: List[float]
    window: int
    skipped: int = 0


def measure_conflict(learner: MetaLearner, tasks: Sequence[Task], iteration: Optional[int] = None,
                     within_task: bool = False) -> List[ConflictRecord]:
    """Per-layer and per-task conflict over ``tasks`` (plus within-task conflict if requested)."""
    iteration = learner.iteration if iteration is None else iteration
    directions = task_meta_gradients(learner, tasks)
    layer = per_layer_conflict(directions)
    task = per_task_conflict(directions)
    records = [
        ConflictRecord(ConflictScope.PER_LAYER, iteration, layer.angles, len(tasks), layer.skipped),
        ConflictRecord(ConflictScope.PER_TASK, iteration, [task.mean], len(tasks), task.skipped),
    ]
    if within_task:
        measures = []
        for i, t in enumerate(tasks):
            try:
                measures.append(within_task_conflict(learner, t))
            except DiagnosticsError as e:
                logger.warning('Within-task conflict skipped for task %d: %s', i, e)
        if measures:
            records.append(ConflictRecord(ConflictScope.WITHIN_TASK, iteration, [m.mean for m in measures],
                                          len(tasks), sum(m.skipped for m in measures)))
    skipped = sum(r.skipped for r in records)
    if skipped:
        logger.warning('Skipped %d zero-norm gradients while measuring conflict', skipped)
    return records


# LOSS LANDSCAPE

@dataclass(frozen=True)
class LandscapeRecord:
    """
    Landscape along the update direction at one inner step.

    ``step`` and ``task`` are -1 for a record averaged over tasks and inner steps.
    """
    step: int
    loss_min: float
    loss_max: float
    grad_diff_min: float
    grad_diff_max: float
    effective_beta: float
    probes: int
    flagged: int = 0
    task: int = -1


def _norm(arrays: Sequence[np.ndarray]) -> float:
    return float(np.sqrt(sum(float(np.sum(a * a)) for a in arrays)))


def landscape_probe(loss_fn: Callable[[List[Node]], Node], theta_t: Sequence[np.ndarray],
                    g_t: Sequence[np.ndarray], step_sizes: Sequence[float], step: int = 0) -> LandscapeRecord:
    """
    Probe ``theta_p = theta_t - eta_p * g_t`` for every step size.

    :param loss_fn: maps one node per parameter array to a scalar loss node
    :param theta_t: current parameters
    :param g_t: gradient at ``theta_t``
    :param step_sizes: probe step sizes ``eta_p``
    :param step: inner step index, stored on the record
    :return: loss range, gradient-difference range and the largest gradient change per unit distance
    """
    if not step_sizes:
        raise DiagnosticsError('landscape_probe needs at least one step size')
    theta_t = [np.asarray(a, dtype=np.float64) for a in theta_t]
    g_t = [np.asarray(g, dtype=np.float64) for g in g_t]
    losses, diffs, ratios = [], [], []
    flagged = 0
    for eta in step_sizes:
        point = [variable(a - eta * g) for a, g in zip(theta_t, g_t)]
        try:
            loss = loss_fn(point)
            gradient = [g.value for g in grad(loss, point)]
        except NumericalError:
            flagged += 1
            continue
        value = float(loss.value)
        diff = _norm([gp - g for gp, g in zip(gradient, g_t)])
        if not (math.isfinite(value) and math.isfinite(diff)):
            flagged += 1
            continue
        losses.append(value)
        diffs.append(diff)
        distance = abs(eta) * _norm(g_t)
        if distance > 0.0:
            ratios.append(diff / distance)
    if flagged:
        logger.warning('%d of %d landscape probes were not finite', flagged, len(step_sizes))
    if not losses:
        nan = float('nan')
        return LandscapeRecord(step, nan, nan, nan, nan, nan, len(step_sizes), flagged)
    return LandscapeRecord(step, min(losses), max(losses), min(diffs), max(diffs),
                           max(ratios) if ratios else 0.0, len(step_sizes), flagged)


def adaptation_landscape(network, theta_start: LayeredParams, support, steps: int, inner_lr: float,
                         multipliers: Sequence[float] = PROBE_MULTIPLIERS) -> List[LandscapeRecord]:
    """
    Probe the support-loss landscape at every inner step of one adaptation, with probe step
    sizes ``multiplier * inner_lr``.
    """
    x, y = support
    arrays = [n.value for n in theta_start.nodes()]
    step_sizes = [m * inner_lr for m in multipliers]

    def loss_fn(nodes):
        return network.loss(LayeredParams.from_nodes(nodes), x, y)

    records = []
    for step in range(steps):
        point = [variable(a) for a in arrays]
        g_t = [g.value for g in grad(loss_fn(point), point)]
        records.append(landscape_probe(loss_fn, arrays, g_t, step_sizes, step))
        arrays = [a - inner_lr * g for a, g in zip(arrays, g_t)]
    return records


def average_landscape(records: Sequence[LandscapeRecord]) -> LandscapeRecord:
    """Average of the finite records, over tasks and inner steps."""
    usable = [r for r in records if math.isfinite(r.loss_min)]
    if not usable:
        raise DiagnosticsError('No finite landscape records to average')

    def avg(name):
        return float(np.mean([getattr(r, name) for r in usable]))

    return LandscapeRecord(-1, avg('loss_min'), avg('loss_max'), avg('grad_diff_min'), avg('grad_diff_max'),
                           avg('effective_beta'), sum(r.probes for r in records), sum(r.flagged for r in records))


def task_landscape(learner: MetaLearner, task: Task, steps: int = None,
                   multipliers: Sequence[float] = PROBE_MULTIPLIERS, task_id: int = -1) -> List[LandscapeRecord]:
    """
    Landscape of a task's adaptation from the learner's (attenuated) initialization.

    :param task_id: stored on every record to tell the tasks of a window apart
    """
    steps = max(learner.config.inner_steps_eval) if steps is None else steps
    modulation = learner.modulation_for(task.support)
    start = learner.network.params if modulation is None else attenuate(learner.network.params, modulation)
    records = adaptation_landscape(learner.network, start.detach(), task.support, steps, learner.config.inner_lr,
                                   multipliers)
    return [replace(r, task=task_id) for r in records]


# GAMMA SWEEP AND LOGGING

@dataclass(frozen=True)
class SweepRow:
    layer: int
    gamma: float
    steps: int
    mean: float
    ci95: float
    count: int
    baseline: float


def gamma_sweep(learner: MetaLearner, layers: Sequence[int], gammas: Sequence[float],
                samples: Callable[[], Iterable[EvalSample]], steps: Sequence[int] = None) -> List[SweepRow]:
    """
    Scale one layer of the initialization by each gamma (every other layer by 1) and evaluate.

    The manual attenuation replaces whatever attenuation the learner generates or learned, so
    the baseline is the unattenuated initialization, evaluated with gamma 1 on every layer.

    :param learner: learner holding the initialization, normally a maml checkpoint
    :param layers: layer indices to sweep
    :param gammas: attenuation values
    :param samples: factory returning a fresh evaluation stream for every run
    :param steps: evaluation step counts
    :return: one row per layer, gamma and step count, each carrying the unattenuated metric
    """
    l = learner.network.layer_count
    invalid = [j for j in layers if not 0 <= j < l]
    if invalid:
        raise ConfigurationError('layers', f'layer indices {invalid} out of range for {l} layers')
    if learner.attenuator is not None or learner.attenuation is not None:
        logger.warning('Sweeping %s initialization, its own attenuation is replaced by the manual gamma',
                       learner.config.method.value)
    identity = layer_modulation([1.0] * l)
    baseline = {row.steps: row.mean
                for row in learner.evaluate(samples(), steps, modulation=identity, publish=False).rows}
    rows = []
    for j in layers:
        for gamma in gammas:
            modulation = layer_modulation([gamma if k == j else 1.0 for k in range(l)])
            table = learner.evaluate(samples(), steps, modulation=modulation, publish=False)
            for row in table.rows:
                rows.append(SweepRow(j, float(gamma), row.steps, row.mean, row.ci95, row.count, baseline[row.steps]))
            logger.debug('Swept layer %d gamma %s: %s', j, gamma, [r.mean for r in table.rows])
    return rows


def log_generated_gamma(learner: MetaLearner, path: str) -> GammaLogWriter:
    """
    Append every gamma the learner generates, during training and evaluation, to a CSV file.

    Returns the subscribed writer; :meth:`MetaLearner.close` completes it.
    """
    writer = GammaLogWriter(path)
    learner.gammas.subscribe(writer)
    return writer


# CSV WRITERS AND MONITORS

class ConflictWriter(CsvObserver):
    HEADER = ['iteration', 'scope', 'index', 'degree', 'window', 'skipped']

    def __init__(self, path: str):
        super().__init__(path, self.HEADER)

    def rows_for(self, record: ConflictRecord) -> List[list]:
        return [[record.iteration, record.scope.value, i, repr(v), record.window, record.skipped]
                for i, v in enumerate(record.values)]


class LandscapeWriter(CsvObserver):
    HEADER = ['iteration', 'task', 'step', 'loss_min', 'loss_max', 'grad_diff_min', 'grad_diff_max',
              'effective_beta', 'probes', 'flagged']

    def __init__(self, path: str):
        super().__init__(path, self.HEADER)
        self.iteration = 0

    def rows_for(self, record: LandscapeRecord) -> List[list]:
        return [[self.iteration, record.task, record.step, repr(record.loss_min), repr(record.loss_max),
                 repr(record.grad_diff_min), repr(record.grad_diff_max), repr(record.effective_beta),
                 record.probes, record.flagged]]

    def write(self, iteration: int, records: Iterable[LandscapeRecord]):
        self.iteration = iteration
        for record in records:
            self.on_next(record)


class DiagnosticsMonitor(Observer):
    """
    Runs conflict and landscape diagnostics on the learner's current state whenever it
    receives an :class:`IterationRecord`.

    :param learner: learner to inspect
    :param tasks: callable ``iteration -> tasks`` giving the diagnostics window
    :param conflict: conflict CSV writer, or None
    :param landscape: landscape CSV writer, or None
    """

    def __init__(self, learner: MetaLearner, tasks: Callable[[int], List[Task]],
                 conflict: ConflictWriter = None, landscape: LandscapeWriter = None):
        super().__init__()
        self.learner = learner
        self.tasks = tasks
        self.conflict = conflict
        self.landscape = landscape

    def attach(self, interval: int):
        """Subscribe to the learner's events, running every ``interval`` outer steps."""
        return every(self.learner.events, interval).subscribe(self)

    def on_next(self, record: IterationRecord):
        # a failed measurement must not abort training
        try:
            self._measure(record.iteration)
        except L2FException as e:
            logger.warning('Diagnostics skipped at iteration %d: %s', record.iteration, e)

    def _measure(self, iteration: int):
        tasks = self.tasks(iteration)
        if self.conflict is not None:
            for conflict in measure_conflict(self.learner, tasks, iteration):
                self.conflict.on_next(conflict)
        if self.landscape is not None:
            records = [r for i, task in enumerate(tasks) for r in task_landscape(self.learner, task, task_id=i)]
            self.landscape.write(iteration, [average_landscape(records)])

    def on_completed(self):
        for writer in (self.conflict, self.landscape):
            if writer is not None:
                writer.close()

    def on_error(self, error):
        self.on_completed()
