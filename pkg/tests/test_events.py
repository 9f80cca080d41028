import csv
import logging

from reactivex.subject import Subject

from l2f.events import GammaLogWriter, GammaRecord, IterationRecord, LoggingReporter, TrainingLogWriter, every


def _read(path):
    with open(path, newline='') as handle:
        return list(csv.reader(handle))


def test_every_keeps_multiples_of_the_interval():
    subject, seen = Subject(), []
    every(subject, 3).subscribe(lambda record: seen.append(record.iteration))
    for i in range(10):
        subject.on_next(IterationRecord(i, 0.0))
    assert seen == [2, 5, 8]


def test_training_log_leaves_gamma_columns_blank_without_attenuation(tmp_path):
    path = str(tmp_path / 'logs' / 'train_log.csv')
    writer = TrainingLogWriter(path, 2)
    writer.on_next(IterationRecord(0, 1.5, wall_time=0.25))
    writer.on_next(IterationRecord(1, 1.25, [0.5, 0.75], [0.25, 0.5], [0.75, 1.0], validation_metric=0.3))
    writer.on_completed()

    header, first, second = _read(path)
    assert header == ['iteration', 'outer_loss', 'gamma_mean_0', 'gamma_mean_1', 'gamma_min_0', 'gamma_min_1',
                      'gamma_max_0', 'gamma_max_1', 'validation_metric', 'wall_time']
    assert first == ['0', '1.5', '', '', '', '', '', '', '', '0.250']
    assert second[2:9] == ['0.5', '0.75', '0.25', '0.5', '0.75', '1.0', '0.3']
    assert writer.rows == 2


def test_gamma_log_closes_on_error(tmp_path):
    path = str(tmp_path / 'gamma_log.csv')
    subject = Subject()
    writer = GammaLogWriter(path)
    subject.subscribe(writer)
    subject.on_next(GammaRecord(4, 'train', 1, 2, 0.125))
    subject.on_error(RuntimeError('diverged'))
    assert writer._handle.closed
    assert _read(path) == [GammaLogWriter.HEADER, ['4', 'train', '1', '2', '0.125']]


def test_logging_reporter(caplog):
    with caplog.at_level(logging.INFO, logger='l2f.train'):
        LoggingReporter().on_next(IterationRecord(9, 0.5, gamma_mean=[0.9, 0.8]))
    assert 'iteration 9: outer loss 0.500000, mean gamma 0.9000 0.8000' in caplog.text
