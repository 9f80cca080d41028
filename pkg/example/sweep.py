"""Scale one layer of a trained MAML initialization at a time and watch the query loss."""

import sys

from l2f.cli import run_sweep, run_train

from example.config_example import ExampleConfig


if __name__ == '__main__':
    config = ExampleConfig.experiment('maml')
    config.checkpoint = sys.argv[1] if len(sys.argv) > 1 else run_train(config)

    for row in run_sweep(config, gammas=(0.0, 0.25, 0.5, 0.75, 1.0)):
        ExampleConfig.logger.info('layer %d, gamma %.2f, %d steps: %.4f (baseline %.4f)',
                                  row.layer, row.gamma, row.steps, row.mean, row.baseline)
