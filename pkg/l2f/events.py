"""
Training events and their observers.

The :class:`~l2f.meta.MetaLearner` publishes one :class:`IterationRecord` per outer step on
``learner.events`` and one :class:`GammaRecord` per generated attenuation entry on
``learner.gammas``. Both are ReactiveX subjects driven from the training thread, so observers
see records in order and never concurrently.
"""

import csv
import logging
import os
from dataclasses import dataclass, field
from typing import List, Optional

from reactivex import Observable, Observer
from reactivex import operators as ops

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class IterationRecord:
    """
    Summary of one outer step.

    ``gamma_mean``, ``gamma_min`` and ``gamma_max`` hold one entry per layer, aggregated over
    the tasks of the batch; they are empty when no attenuation is applied.
    """
    iteration: int
    outer_loss: float
    gamma_mean: List[float] = field(default_factory=list)
    gamma_min: List[float] = field(default_factory=list)
    gamma_max: List[float] = field(default_factory=list)
    task_gammas: List[List[float]] = field(default_factory=list)
    wall_time: float = 0.0
    validation_metric: Optional[float] = None


@dataclass(frozen=True)
class GammaRecord:
    iteration: int
    phase: str
    task_id: int
    layer: int
    gamma: float


def every(observable: Observable, interval: int) -> Observable:
    """Records whose iteration number (counted from 1) is a multiple of ``interval``."""
    return observable.pipe(ops.filter(lambda record: (record.iteration + 1) % interval == 0))


class CsvObserver(Observer):
    """Base class for observers that append one CSV row per record."""

    def __init__(self, path: str, header: List[str]):
        super().__init__()
        directory = os.path.dirname(path)
        if directory:
            os.makedirs(directory, exist_ok=True)
        self.path = path
        self.rows = 0
        self._handle = open(path, 'w', newline='')
        self._writer = csv.writer(self._handle)
        self._writer.writerow(header)

    def rows_for(self, record) -> List[list]:
        raise NotImplementedError

    def on_next(self, record):
        for row in self.rows_for(record):
            self._writer.writerow(row)
            self.rows += 1
        self._handle.flush()

    def on_completed(self):
        self.close()

    def on_error(self, error):
        logger.error('Closing %s after error: %s', self.path, error)
        self.close()

    def close(self):
        if not self._handle.closed:
            self._handle.close()


class TrainingLogWriter(CsvObserver):
    """
    Training log: ``iteration, outer_loss, gamma_mean_<j>, gamma_min_<j>, gamma_max_<j>,
    validation_metric, wall_time``.
    """

    def __init__(self, path: str, layer_count: int):
        self.layer_count = layer_count
        header = ['iteration', 'outer_loss']
        for stat in ('mean', 'min', 'max'):
            header.extend(f'gamma_{stat}_{j}' for j in range(layer_count))
        header.extend(['validation_metric', 'wall_time'])
        super().__init__(path, header)

    def rows_for(self, record: IterationRecord) -> List[list]:
        blank = [''] * self.layer_count
        row = [record.iteration, repr(record.outer_loss)]
        for values in (record.gamma_mean, record.gamma_min, record.gamma_max):
            row.extend([repr(v) for v in values] if values else blank)
        row.append('' if record.validation_metric is None else repr(record.validation_metric))
        row.append(f'{record.wall_time:.3f}')
        return [row]


class GammaLogWriter(CsvObserver):
    """Generated attenuation log: ``iteration, phase, task_id, layer, gamma``."""

    HEADER = ['iteration', 'phase', 'task_id', 'layer', 'gamma']

    def __init__(self, path: str):
        super().__init__(path, self.HEADER)

    def rows_for(self, record: GammaRecord) -> List[list]:
        return [[record.iteration, record.phase, record.task_id, record.layer, repr(record.gamma)]]


class LoggingReporter(Observer):
    """Log a one-line summary of the records it receives."""

    def __init__(self, name: str = 'l2f.train'):
        super().__init__()
        self.logger = logging.getLogger(name)

    def on_next(self, record: IterationRecord):
        message = 'iteration %d: outer loss %.6f'
        args = [record.iteration, record.outer_loss]
        if record.gamma_mean:
            message += ', mean gamma %s'
            args.append(' '.join(f'{g:.4f}' for g in record.gamma_mean))
        if record.validation_metric is not None:
            message += ', validation %.6f'
            args.append(record.validation_metric)
        self.logger.info(message, *args)

    def on_completed(self):
        self.logger.info('Training stream completed')

    def on_error(self, error):
        self.logger.error('Training stopped: %s', error)
