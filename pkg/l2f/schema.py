"""Enumerations shared by the l2f modules."""

from enum import Enum


class _Choice(Enum):

    @classmethod
    def values(cls):
        return list(map(lambda c: c.value, cls))

    @classmethod
    def parse(cls, value):
        """Accept an enum member or its string value (underscores and dashes are interchangeable)."""
        if isinstance(value, cls):
            return value
        normalized = str(value).strip().lower().replace('_', '-')
        for member in cls:
            if member.value == normalized:
                return member
        raise ValueError(f'{value!r} is not one of {cls.values()}')


class Method(_Choice):
    MAML = 'maml'
    L2F = 'l2f'
    LEARNED_SCOPE = 'learned-scope'
    TRANSFORM_VARIANT = 'transform-variant'


class Order(_Choice):
    FIRST = 'first'
    SECOND = 'second'


class Transform(_Choice):
    SIGMOIDED_GAMMA = 'sigmoided-gamma'
    RAW_GAMMA = 'raw-gamma'
    AFFINE = 'affine'


class Scope(_Choice):
    PARAMETER = 'parameter'
    FILTER = 'filter'
    LAYER = 'layer'
    NETWORK = 'network'
    NONE = 'none'


class Head(_Choice):
    REGRESSION = 'regression'
    CLASSIFICATION = 'classification'


class GradSummary(_Choice):
    SIGNED = 'signed'
    # opt-in, the attenuator normally sees the signed mean
    ABSOLUTE = 'absolute'


class ConflictScope(_Choice):
    PER_LAYER = 'per-layer'
    PER_TASK = 'per-task'
    WITHIN_TASK = 'within-task'


class TaskFamily(_Choice):
    SINUSOID = 'sinusoid'
    CLASSIFICATION = 'classification'


class Distribution(_Choice):
    STANDARD = 'standard'
    NON_OVERLAPPED = 'non-overlapped'
