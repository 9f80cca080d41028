"""
Experiment configuration and logging setup.

Configuration files are YAML with one section per dataclass::

    meta:
      method: l2f
      inner_lr: 0.01
      meta_batch_size: 4
    tasks:
      family: sinusoid
      k: 5
    evaluation:
      curves: 100
    output_dir: runs/l2f-5shot

Values resolve as dataclass defaults < YAML file < command-line overrides.
"""

import dataclasses
import logging
import os
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, List, Optional, Tuple, Union, get_args, get_origin, get_type_hints

import yaml

from l2f.diagnostics import PROBE_MULTIPLIERS
from l2f.exceptions import ConfigurationError
from l2f.meta import MetaConfig
from l2f.models import REGRESSION_SIZES
from l2f.schema import Distribution, Head, TaskFamily
from l2f.tasks import ClassificationSpec, distribution_pair

LOG_FORMAT = '[%(asctime)s] - [%(name)s] - [%(levelname)s] - %(message)s'
CONFIG_FILE = 'config.yaml'

CLASSIFICATION_HIDDEN = (40, 40)


def configure_logging(debug: bool = False, name: str = 'l2f') -> logging.Logger:
    """
    Attach a console handler to the package logger. Calling it again only updates the level.

    :param debug: log at DEBUG instead of INFO
    :param name: logger name
    """
    logger = logging.getLogger(name)
    logger.setLevel(logging.DEBUG if debug else logging.INFO)
    if not any(getattr(h, '_l2f_console', False) for h in logger.handlers):
        console_handler = logging.StreamHandler()
        console_handler._l2f_console = True
        formatter = logging.Formatter(LOG_FORMAT)
        console_handler.setFormatter(formatter)
        logger.addHandler(console_handler)
    return logger


@dataclass
class TaskConfig:
    """Task family, distribution preset and shot counts."""
    family: TaskFamily = TaskFamily.SINUSOID
    distribution: Distribution = Distribution.STANDARD
    k: int = 5
    m: Optional[int] = None
    n_way: int = 5
    dim: int = 8
    sigma: float = 0.05
    sizes: Optional[List[int]] = None

    def __post_init__(self):
        self.family = TaskFamily.parse(self.family)
        self.distribution = Distribution.parse(self.distribution)

    @property
    def head(self) -> Head:
        return Head.CLASSIFICATION if self.family is TaskFamily.CLASSIFICATION else Head.REGRESSION

    @property
    def query_size(self) -> int:
        return self.k if self.m is None else self.m

    def network_sizes(self) -> Tuple[int, ...]:
        if self.sizes is not None:
            return tuple(self.sizes)
        if self.family is TaskFamily.CLASSIFICATION:
            return (self.dim,) + CLASSIFICATION_HIDDEN + (self.n_way,)
        return REGRESSION_SIZES

    def specs(self):
        """Training and evaluation task specs."""
        if self.family is TaskFamily.CLASSIFICATION:
            spec = ClassificationSpec(self.n_way, self.k, self.query_size, self.dim, self.sigma)
            return spec, spec
        return distribution_pair(self.distribution, self.k, self.query_size)

    def validate(self) -> 'TaskConfig':
        if self.family is TaskFamily.CLASSIFICATION and self.distribution is not Distribution.STANDARD:
            raise ConfigurationError('tasks.distribution', 'only the sinusoid family has distribution presets')
        for spec in self.specs():
            spec.validate()
        sizes = self.network_sizes()
        expected_in = self.dim if self.family is TaskFamily.CLASSIFICATION else 1
        expected_out = self.n_way if self.family is TaskFamily.CLASSIFICATION else 1
        if len(sizes) < 2 or sizes[0] != expected_in or sizes[-1] != expected_out:
            raise ConfigurationError('tasks.sizes', f'{list(sizes)} must start with {expected_in} and end '
                                                    f'with {expected_out}')
        return self


@dataclass
class EvaluationConfig:
    """Evaluation protocol: curves x repeats, each with a fresh ``query_size`` query set."""
    curves: int = 100
    repeats: int = 100
    query_size: int = 100
    validation_curves: int = 10
    validation_repeats: int = 1

    def validate(self) -> 'EvaluationConfig':
        for name in ('curves', 'repeats', 'query_size', 'validation_curves', 'validation_repeats'):
            if getattr(self, name) < 1:
                raise ConfigurationError(f'evaluation.{name}', f'must be at least 1, got {getattr(self, name)}')
        return self


@dataclass
class DiagnosticsConfig:
    """
    :param tasks: tasks per diagnostics window
    :param within_task: also measure within-task conflict
    :param multipliers: landscape probe step sizes, in units of the inner learning rate
    """
    tasks: int = 10
    within_task: bool = False
    multipliers: List[float] = field(default_factory=lambda: list(PROBE_MULTIPLIERS))

    def validate(self) -> 'DiagnosticsConfig':
        if self.tasks < 2:
            raise ConfigurationError('diagnostics.tasks', f'conflict needs at least 2 tasks, got {self.tasks}')
        if not self.multipliers:
            raise ConfigurationError('diagnostics.multipliers', 'must not be empty')
        return self


SECTIONS = {
    'meta': MetaConfig,
    'tasks': TaskConfig,
    'evaluation': EvaluationConfig,
    'diagnostics': DiagnosticsConfig,
}


@dataclass
class ExperimentConfig:
    """
    Everything a run needs. A run is reproducible from its archived ``config.yaml``.

    :param output_dir: every file a command writes goes below this directory
    :param checkpoint: checkpoint to read for eval, diagnose and sweep
    """
    meta: MetaConfig = field(default_factory=MetaConfig)
    tasks: TaskConfig = field(default_factory=TaskConfig)
    evaluation: EvaluationConfig = field(default_factory=EvaluationConfig)
    diagnostics: DiagnosticsConfig = field(default_factory=DiagnosticsConfig)
    output_dir: str = 'runs'
    checkpoint: Optional[str] = None
    debug: bool = False

    def validate(self) -> 'ExperimentConfig':
        try:
            self.meta.validate()
        except ConfigurationError as e:
            raise ConfigurationError(f'meta.{e.field}', e.message) from e
        self.tasks.validate()
        self.evaluation.validate()
        self.diagnostics.validate()
        if not self.output_dir:
            raise ConfigurationError('output_dir', 'must not be empty')
        return self

    def output_path(self, name: str) -> str:
        return os.path.join(self.output_dir, name)

    def to_dict(self) -> Dict[str, Any]:
        return _plain(dataclasses.asdict(self))

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'ExperimentConfig':
        data = dict(data or {})
        kwargs = {}
        for name, section in SECTIONS.items():
            kwargs[name] = _build(section, data.pop(name, None) or {}, name)
        hints = get_type_hints(cls)
        for key, value in data.items():
            if key not in hints:
                raise ConfigurationError(key, 'unknown configuration key')
            kwargs[key] = _coerce(hints[key], value, key)
        return cls(**kwargs)

    def with_overrides(self, overrides: Dict[str, Any]) -> 'ExperimentConfig':
        """
        Apply dotted overrides such as ``{'meta.inner_lr': 0.02}``; ``None`` values are ignored.
        """
        data = self.to_dict()
        for key, value in overrides.items():
            if value is None:
                continue
            target = data
            *path, leaf = key.split('.')
            for part in path:
                target = target.setdefault(part, {})
            target[leaf] = _plain(value)
        return ExperimentConfig.from_dict(data)


def _build(section, values: Dict[str, Any], prefix: str):
    names = {f.name for f in dataclasses.fields(section)}
    unknown = sorted(set(values) - names)
    if unknown:
        raise ConfigurationError(f'{prefix}.{unknown[0]}', 'unknown configuration key')
    hints = get_type_hints(section)
    values = {name: _coerce(hints[name], value, f'{prefix}.{name}') for name, value in values.items()}
    try:
        return section(**values)
    except ValueError as e:
        raise ConfigurationError(prefix, str(e)) from e


def _coerce(kind, value, key: str):
    """
    Check a scalar or list value against its field type. YAML reads ``1e4`` as a string, so
    numeric strings are converted; integer fields accept integral floats.
    """
    if get_origin(kind) is Union:
        if value is None:
            return None
        kind = next(a for a in get_args(kind) if a is not type(None))
    if get_origin(kind) in (list, tuple):
        if not isinstance(value, (list, tuple)):
            raise ConfigurationError(key, f'must be a list, got {value!r}')
        item = get_args(kind)[0]
        return [_coerce(item, v, key) for v in value]
    if kind is bool:
        if not isinstance(value, bool):
            raise ConfigurationError(key, f'must be true or false, got {value!r}')
        return value
    if kind not in (int, float):
        return value
    number = value
    if isinstance(value, str):
        try:
            number = float(value)
        except ValueError:
            raise ConfigurationError(key, f'must be a number, got {value!r}') from None
    if isinstance(number, bool) or not isinstance(number, (int, float)):
        raise ConfigurationError(key, f'must be a number, got {value!r}')
    if kind is float:
        return float(number)
    if isinstance(number, float):
        if not number.is_integer():
            raise ConfigurationError(key, f'must be an integer, got {value!r}')
        return int(number)
    return number


def _plain(value):
    if isinstance(value, Enum):
        return value.value
    if isinstance(value, dict):
        return {k: _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    return value


def read_config_file(path: str) -> Dict[str, Any]:
    """Raw mapping of a YAML configuration file."""
    try:
        with open(path) as handle:
            data = yaml.safe_load(handle) or {}
    except OSError as e:
        raise ConfigurationError('config', f'cannot read {path}: {e}') from e
    except yaml.YAMLError as e:
        raise ConfigurationError('config', f'{path} is not valid YAML: {e}') from e
    if not isinstance(data, dict):
        raise ConfigurationError('config', f'{path} must contain a mapping')
    return data


def load_config(path: str = None, overrides: Dict[str, Any] = None) -> ExperimentConfig:
    """
    Resolve a configuration from defaults, an optional YAML file and overrides, and validate it.

    :param path: YAML file, optional
    :param overrides: dotted keys, see :meth:`ExperimentConfig.with_overrides`
    """
    data = read_config_file(path) if path is not None else {}
    config = ExperimentConfig.from_dict(data)
    if overrides:
        config = config.with_overrides(overrides)
    return config.validate()


def dump_config(config: ExperimentConfig, path: str = None) -> str:
    """Archive the resolved configuration, by default as ``config.yaml`` in the output directory."""
    path = path or config.output_path(CONFIG_FILE)
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, 'w') as handle:
        yaml.safe_dump(config.to_dict(), handle, sort_keys=False)
    return path
