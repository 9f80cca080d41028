"""Example configuration."""
import logging

from l2f.config import EvaluationConfig, ExperimentConfig, TaskConfig
from l2f.meta import MetaConfig


class ExampleConfig:
    """Small sinusoid run, minutes on a laptop."""

    OUTPUT_DIR = 'runs/example'
    SEED = 0

    logger = logging.getLogger(__name__)
    logger.setLevel(logging.DEBUG)

    console_handler = logging.StreamHandler()
    console_handler.setLevel(logging.DEBUG)

    formatter = logging.Formatter('[%(asctime)s] - [%(name)s] - [%(levelname)s] - %(message)s')
    console_handler.setFormatter(formatter)

    logger.addHandler(console_handler)

    @classmethod
    def experiment(cls, method: str = 'l2f', iterations: int = 2000) -> ExperimentConfig:
        return ExperimentConfig(
            meta=MetaConfig(method=method, iterations=iterations, seed=cls.SEED),
            tasks=TaskConfig(k=5),
            evaluation=EvaluationConfig(curves=20, repeats=10),
            output_dir=f'{cls.OUTPUT_DIR}/{method}',
        ).validate()
