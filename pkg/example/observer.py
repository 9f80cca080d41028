"""Follow the generated attenuation while meta-training."""

import logging

from reactivex import Observer
from reactivex import operators as ops

from l2f.meta import MetaLearner
from l2f.tasks import TaskSampler

from example.config_example import ExampleConfig


class GammaObserver(Observer):
    """Observer that warns when a layer is attenuated almost completely."""
    def __init__(self, threshold: float = 0.05):
        super().__init__()
        self.logger = logging.getLogger(__name__)
        self.threshold = threshold

    def on_next(self, record):
        """Inspect one generated gamma."""
        self.logger.info('Iteration %d, task %d: layer %d attenuated to %.4f',
                         record.iteration, record.task_id, record.layer, record.gamma)

    def on_completed(self):
        """Training finished."""
        self.logger.info('GammaObserver completed!')

    def on_error(self, error):
        """Training diverged."""
        self.logger.error('Error occurred in GammaObserver: %s', error)


if __name__ == '__main__':
    config = ExampleConfig.experiment('l2f', iterations=500)
    learner = MetaLearner.initialize(config.meta, config.tasks.network_sizes())
    observer = GammaObserver()

    learner.gammas.pipe(ops.filter(lambda record: record.gamma < observer.threshold)).subscribe(observer)
    learner.events.pipe(ops.filter(lambda record: record.iteration % 100 == 0))\
        .subscribe(lambda record: ExampleConfig.logger.info('iteration %d: %.4f', record.iteration,
                                                            record.outer_loss))

    ExampleConfig.logger.info('Starting meta-training ...')
    train_spec, _ = config.tasks.specs()
    learner.meta_train(TaskSampler(train_spec, config.meta.seed))
    learner.close()
