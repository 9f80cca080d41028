"""Exceptions raised by the l2f package."""


class L2FException(Exception):
    pass


class ShapeError(L2FException):
    """Operand shapes do not conform for a primitive."""

    def __init__(self, primitive: str, *shapes):
        self.primitive = primitive
        self.shapes = shapes
        super().__init__(f'{primitive}: incompatible shapes {" and ".join(str(tuple(s)) for s in shapes)}')


class GradientError(L2FException):
    pass


class AdaptationError(L2FException):
    """Inner-loop adaptation produced a non-finite loss."""

    def __init__(self, step: int, loss: float, task_index: int = None):
        self.step = step
        self.loss = loss
        self.task_index = task_index
        where = f'task {task_index}, ' if task_index is not None else ''
        super().__init__(f'Non-finite support loss ({loss}) at {where}inner step {step}')

    def for_task(self, task_index: int) -> 'AdaptationError':
        return AdaptationError(self.step, self.loss, task_index)


class DivergenceError(L2FException):
    """The outer loss became non-finite."""

    def __init__(self, iteration: int, loss: float, checkpoint: str = None):
        self.iteration = iteration
        self.loss = loss
        self.checkpoint = checkpoint
        message = f'Outer loss diverged ({loss}) at iteration {iteration}'
        if checkpoint is not None:
            message += f', last finite state written to {checkpoint}'
        super().__init__(message)


class ConfigurationError(L2FException):
    """Invalid configuration value."""

    def __init__(self, field: str, message: str):
        self.field = field
        self.message = message
        super().__init__(f'{field}: {message}')


class CheckpointError(L2FException):
    pass


class DiagnosticsError(L2FException):
    pass


class NumericalError(L2FException):
    """A primitive produced a non-finite value."""

    def __init__(self, primitive: str):
        self.primitive = primitive
        super().__init__(f'{primitive}: produced a non-finite value')
