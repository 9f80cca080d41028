"""
Experiment runner.

Subcommands ``train``, ``eval``, ``diagnose``, ``sweep`` and ``selftest``. Exit codes: 0 on
success, 1 for usage and configuration errors, 2 for runtime errors.
"""

import argparse
import csv
import logging
import os
import sys
from typing import Dict, List, Sequence

from l2f import __version__
from l2f.checkpoint import check_architecture, load_checkpoint
from l2f.config import ExperimentConfig, configure_logging, dump_config, load_config, read_config_file
from l2f.diagnostics import (ConflictWriter, DiagnosticsMonitor, LandscapeWriter, SweepRow, average_landscape,
                             gamma_sweep, log_generated_gamma, measure_conflict, task_landscape)
from l2f.events import LoggingReporter, TrainingLogWriter, every
from l2f.exceptions import CheckpointError, ConfigurationError, L2FException
from l2f.meta import EvaluationTable, MetaLearner
from l2f.schema import Distribution, GradSummary, Method, Order, Scope, TaskFamily, Transform
from l2f.selftest import run_selftest
from l2f.tasks import TaskSampler, stream_factory

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RUNTIME = 2

CHECKPOINT_FILE = 'checkpoint.npz'
TRAIN_LOG = 'train_log.csv'
GAMMA_LOG = 'gamma_log.csv'
EVAL_FILE = 'eval.csv'
CONFLICT_FILE = 'conflict.csv'
LANDSCAPE_FILE = 'landscape.csv'
SWEEP_FILE = 'sweep.csv'

DIAGNOSTICS = ('conflict', 'landscape', 'gamma-log')
CHECKPOINT_COMMANDS = ('eval', 'diagnose', 'sweep')
SWEEP_GAMMAS = (0.0, 0.25, 0.5, 0.75, 1.0)
REPORT_EVERY = 100

# flag destination -> dotted configuration key
FLAG_KEYS = {
    'output_dir': 'output_dir',
    'checkpoint': 'checkpoint',
    'method': 'meta.method',
    'order': 'meta.order',
    'scope': 'meta.scope',
    'transform': 'meta.transform',
    'grad_summary': 'meta.grad_summary',
    'inner_lr': 'meta.inner_lr',
    'meta_lr': 'meta.meta_lr',
    'inner_steps_train': 'meta.inner_steps_train',
    'inner_steps_eval': 'meta.inner_steps_eval',
    'meta_batch_size': 'meta.meta_batch_size',
    'iterations': 'meta.iterations',
    'seed': 'meta.seed',
    'gamma_identity': 'meta.gamma_identity',
    'diagnostics_every': 'meta.diagnostics_every',
    'validate_every': 'meta.validate_every',
    'family': 'tasks.family',
    'distribution': 'tasks.distribution',
    'k': 'tasks.k',
    'm': 'tasks.m',
    'n_way': 'tasks.n_way',
    'eval_curves': 'evaluation.curves',
    'eval_repeats': 'evaluation.repeats',
    'eval_query': 'evaluation.query_size',
    'diagnostics_tasks': 'diagnostics.tasks',
}


class _Parser(argparse.ArgumentParser):

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f'{self.prog}: error: {message}\n')


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument('--config', help='YAML configuration file')
    parser.add_argument('--output-dir', help='directory receiving every output of the command')
    parser.add_argument('--checkpoint', help='checkpoint to read')
    parser.add_argument('--debug', action='store_true', help='log at DEBUG level')
    parser.add_argument('--quiet', action='store_true', help='disable progress bars')
    parser.add_argument('--seed', type=int)
    parser.add_argument('--method', choices=Method.values())
    parser.add_argument('--order', choices=Order.values())
    parser.add_argument('--scope', choices=Scope.values(), help='attenuation scope of the learned-scope method')
    parser.add_argument('--transform', choices=Transform.values())
    parser.add_argument('--grad-summary', choices=GradSummary.values())
    parser.add_argument('--inner-lr', type=float)
    parser.add_argument('--meta-lr', type=float)
    parser.add_argument('--inner-steps-train', type=int)
    parser.add_argument('--inner-steps-eval', type=int, nargs='+')
    parser.add_argument('--meta-batch-size', type=int)
    parser.add_argument('--iterations', type=int)
    parser.add_argument('--gamma-identity', action='store_const', const=True,
                        help='force the attenuator to emit gamma = 1 and keep it frozen')
    parser.add_argument('--diagnostics-every', type=int)
    parser.add_argument('--validate-every', type=int)
    parser.add_argument('--family', choices=TaskFamily.values())
    parser.add_argument('--distribution', choices=Distribution.values())
    parser.add_argument('--k', type=int, help='support examples per task (per class for classification)')
    parser.add_argument('--m', type=int, help='query examples per training task, defaults to k')
    parser.add_argument('--n-way', type=int)
    parser.add_argument('--eval-curves', type=int)
    parser.add_argument('--eval-repeats', type=int)
    parser.add_argument('--eval-query', type=int)
    parser.add_argument('--diagnostics-tasks', type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog='l2f', description='Meta-learning with task-and-layer-wise attenuation.')
    parser.add_argument('--version', action='version', version=f'%(prog)s {__version__}')
    commands = parser.add_subparsers(dest='command', required=True, parser_class=_Parser)

    train = commands.add_parser('train', help='meta-train and write a checkpoint')
    _add_common(train)

    evaluate = commands.add_parser('eval', help='evaluate a checkpoint')
    _add_common(evaluate)

    diagnose = commands.add_parser('diagnose', help='write conflict, landscape and gamma diagnostics')
    _add_common(diagnose)
    diagnose.add_argument('--which', nargs='*', choices=DIAGNOSTICS, default=[],
                          help='diagnostics to produce')

    sweep = commands.add_parser('sweep', help='manual gamma sweep over layers of a checkpoint')
    _add_common(sweep)
    sweep.add_argument('--layers', type=int, nargs='+', help='layer indices, defaults to every layer')
    sweep.add_argument('--gammas', type=float, nargs='+', default=list(SWEEP_GAMMAS))

    selftest = commands.add_parser('selftest', help='run the finite-difference and oracle suites')
    selftest.add_argument('--debug', action='store_true')
    return parser


def resolve_config(args: argparse.Namespace) -> ExperimentConfig:
    """
    Defaults < ``--config`` file < flags. Commands reading a checkpoint take the method from it
    unless the flags or the file name one.
    """
    overrides: Dict[str, object] = {}
    for dest, key in FLAG_KEYS.items():
        overrides[key] = getattr(args, dest, None)
    if getattr(args, 'quiet', False):
        overrides['meta.progress'] = False
    if getattr(args, 'debug', False):
        overrides['debug'] = True
    config = load_config(args.config, overrides)
    if args.command in CHECKPOINT_COMMANDS and config.checkpoint and not _method_given(args):
        settings = load_checkpoint(config.checkpoint).method_settings()
        logger.info('Method %s taken from %s', settings['meta.method'].value, config.checkpoint)
        config = config.with_overrides(settings).validate()
    return config


def _method_given(args: argparse.Namespace) -> bool:
    if args.method is not None:
        return True
    return args.config is not None and 'method' in (read_config_file(args.config).get('meta') or {})


def _prepare(config: ExperimentConfig) -> None:
    config.validate()
    os.makedirs(config.output_dir, exist_ok=True)
    dump_config(config)


def _load_learner(config: ExperimentConfig) -> MetaLearner:
    if not config.checkpoint:
        raise ConfigurationError('checkpoint', 'this command needs --checkpoint')
    checkpoint = load_checkpoint(config.checkpoint)
    check_architecture(checkpoint, config.tasks.network_sizes())
    if config.meta.uses_attenuator and checkpoint.attenuator is None:
        raise CheckpointError(f'{config.checkpoint} has no attenuator, method {config.meta.method.value} needs one')
    if config.meta.method is Method.LEARNED_SCOPE and checkpoint.attenuation is None:
        raise CheckpointError(f'{config.checkpoint} has no learned attenuation')
    if config.meta.method is Method.MAML and checkpoint.attenuator is not None:
        logger.warning('Checkpoint holds an attenuator, method maml ignores it')
    return MetaLearner.from_checkpoint(checkpoint, config.meta, config.debug)


def _eval_samples(config: ExperimentConfig):
    _, eval_spec = config.tasks.specs()
    return stream_factory(eval_spec, config.meta.seed, config.evaluation.curves, config.evaluation.repeats,
                          config.evaluation.query_size)


def _diagnostics_sampler(config: ExperimentConfig):
    train_spec, _ = config.tasks.specs()
    sampler = TaskSampler(train_spec, config.meta.seed, stream='diagnostics')
    return lambda iteration: sampler(iteration, config.diagnostics.tasks)


def run_train(config: ExperimentConfig) -> str:
    """
    Meta-train and write the checkpoint, the training log, the gamma log (attenuated methods)
    and the resolved configuration into the output directory.

    :return: checkpoint path
    """
    _prepare(config)
    learner = MetaLearner.initialize(config.meta, config.tasks.network_sizes(), config.tasks.head, config.debug)
    train_spec, eval_spec = config.tasks.specs()
    sampler = TaskSampler(train_spec, config.meta.seed)
    checkpoint_path = config.output_path(CHECKPOINT_FILE)

    learner.events.subscribe(TrainingLogWriter(config.output_path(TRAIN_LOG), learner.network.layer_count))
    every(learner.events, REPORT_EVERY).subscribe(LoggingReporter())
    if config.meta.uses_attenuator:
        log_generated_gamma(learner, config.output_path(GAMMA_LOG))
    if config.meta.diagnostics_every:
        DiagnosticsMonitor(learner, _diagnostics_sampler(config),
                           ConflictWriter(config.output_path(CONFLICT_FILE)),
                           LandscapeWriter(config.output_path(LANDSCAPE_FILE))).attach(config.meta.diagnostics_every)
    validation = None
    if config.meta.validate_every:
        validation = stream_factory(eval_spec, config.meta.seed, config.evaluation.validation_curves,
                                    config.evaluation.validation_repeats, config.evaluation.query_size,
                                    stream='validation')

    logger.info('Training %s for %d iterations, output in %s', config.meta.method.value, config.meta.iterations,
                config.output_dir)
    try:
        learner.meta_train(sampler, checkpoint_path=checkpoint_path, validation=validation)
    finally:
        learner.close()
    learner.save(checkpoint_path)
    logger.info('Checkpoint written to %s', checkpoint_path)
    return checkpoint_path


def write_table(path: str, table: EvaluationTable) -> str:
    with open(path, 'w', newline='') as handle:
        writer = csv.writer(handle)
        writer.writerow(['steps', 'metric', 'mean', 'ci95', 'count'])
        for row in table.rows:
            writer.writerow([row.steps, table.metric, repr(row.mean), repr(row.ci95), row.count])
    return path


def run_eval(config: ExperimentConfig) -> EvaluationTable:
    """Evaluate a checkpoint, writing ``eval.csv`` and printing the table."""
    _prepare(config)
    learner = _load_learner(config)
    table = learner.evaluate(_eval_samples(config)())
    write_table(config.output_path(EVAL_FILE), table)
    print(table.format())
    return table


def run_diagnose(config: ExperimentConfig, which: Sequence[str]) -> List[str]:
    """
    Write the requested diagnostics of a checkpoint.

    :param which: any of ``conflict``, ``landscape``, ``gamma-log``
    :return: paths written
    """
    if not which:
        logger.warning('No diagnostics selected, nothing to do')
        return []
    _prepare(config)
    learner = _load_learner(config)
    tasks = _diagnostics_sampler(config)(0)
    written = []
    if 'conflict' in which:
        writer = ConflictWriter(config.output_path(CONFLICT_FILE))
        for record in measure_conflict(learner, tasks, within_task=config.diagnostics.within_task):
            writer.on_next(record)
        writer.close()
        written.append(writer.path)
    if 'landscape' in which:
        writer = LandscapeWriter(config.output_path(LANDSCAPE_FILE))
        per_task = [task_landscape(learner, task, multipliers=config.diagnostics.multipliers, task_id=i)
                    for i, task in enumerate(tasks)]
        writer.write(learner.iteration, [r for records in per_task for r in records])
        writer.write(learner.iteration, [average_landscape([r for records in per_task for r in records])])
        writer.close()
        written.append(writer.path)
    if 'gamma-log' in which:
        if not learner.config.uses_attenuator:
            logger.warning('Method %s generates no gamma, the log stays empty', learner.config.method.value)
        gamma_writer = log_generated_gamma(learner, config.output_path(GAMMA_LOG))
        learner.evaluate(_eval_samples(config)())
        learner.close()
        written.append(gamma_writer.path)
    return written


def write_sweep(path: str, rows: Sequence[SweepRow], provenance: Dict[str, object]) -> str:
    """Sweep CSV, preceded by ``# key: value`` provenance lines."""
    with open(path, 'w', newline='') as handle:
        for key, value in provenance.items():
            handle.write(f'# {key}: {value}\n')
        writer = csv.writer(handle)
        writer.writerow(['layer', 'gamma', 'steps', 'mean', 'ci95', 'count', 'baseline'])
        for row in rows:
            writer.writerow([row.layer, repr(row.gamma), row.steps, repr(row.mean), repr(row.ci95), row.count,
                             repr(row.baseline)])
    return path


def run_sweep(config: ExperimentConfig, layers: Sequence[int] = None,
              gammas: Sequence[float] = SWEEP_GAMMAS) -> List[SweepRow]:
    """Manual gamma sweep of a checkpoint, written to ``sweep.csv``."""
    _prepare(config)
    learner = _load_learner(config)
    layers = list(range(learner.network.layer_count)) if layers is None else list(layers)
    rows = gamma_sweep(learner, layers, gammas, _eval_samples(config))
    provenance = {
        'checkpoint': config.checkpoint,
        'method': config.meta.method.value,
        'seed': config.meta.seed,
        'inner_lr': config.meta.inner_lr,
        'protocol': f'{config.evaluation.curves} curves x {config.evaluation.repeats} repeats x '
                    f'{config.evaluation.query_size} query points',
        'version': __version__,
    }
    write_sweep(config.output_path(SWEEP_FILE), rows, provenance)
    return rows


def main(argv: Sequence[str] = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args.debug)
    try:
        if args.command == 'selftest':
            report = run_selftest()
            print(report.format())
            return EXIT_OK if report.passed else EXIT_RUNTIME
        config = resolve_config(args)
        configure_logging(config.debug)
        if args.command == 'train':
            run_train(config)
        elif args.command == 'eval':
            run_eval(config)
        elif args.command == 'diagnose':
            run_diagnose(config, args.which)
        elif args.command == 'sweep':
            run_sweep(config, args.layers, args.gammas)
    except ConfigurationError as e:
        logger.error('Invalid configuration: %s', e)
        return EXIT_USAGE
    except L2FException as e:
        logger.error('%s', e)
        return EXIT_RUNTIME
    return EXIT_OK
