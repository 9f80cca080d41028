"""Train MAML and L2F side by side and compare them on the same evaluation stream."""

from l2f.cli import run_eval, run_train

from example.config_example import ExampleConfig


if __name__ == '__main__':
    tables = {}
    for method in ('maml', 'l2f'):
        config = ExampleConfig.experiment(method)
        ExampleConfig.logger.info('Training %s ...', method)
        config.checkpoint = run_train(config)
        tables[method] = run_eval(config)

    for maml, l2f in zip(tables['maml'].rows, tables['l2f'].rows):
        ExampleConfig.logger.info('%d steps: maml %.4f +- %.4f, l2f %.4f +- %.4f',
                                  maml.steps, maml.mean, maml.ci95, l2f.mean, l2f.ci95)
