import os

import numpy as np
import pytest
from conftest import SMALL_SIZES, scalar_network, scalar_task

from l2f.autodiff import add, constant, finite_difference_check, grad, sum_all, variable
from l2f.checkpoint import load_checkpoint
from l2f.exceptions import AdaptationError, ConfigurationError, DivergenceError, ShapeError
from l2f.meta import Adam, MetaConfig, MetaLearner, attenuate, inner_adapt, meta_batch, meta_loss, summarize
from l2f.models import LayeredParams, ModulationParams, TaskNetwork
from l2f.schema import Head, Method, Order, Scope, Transform
from l2f.tasks import STANDARD, ClassificationSpec, EvalSample, Task, TaskSampler, eval_protocol, stream_factory


def _theta():
    return LayeredParams.from_arrays([(np.ones((2, 1)), np.ones(2)), (np.ones((1, 2)), np.ones(1))])


def _all_arrays(learner):
    return [n.value for n in learner.trainable()]


# ATTENUATION

def test_layer_attenuation_scales_each_layer():
    scaled = attenuate(_theta(), ModulationParams(Scope.LAYER, (constant(0.5), constant(2.0))))
    (w0, b0), (w1, b1) = scaled.arrays()
    assert np.array_equal(w0, [[0.5], [0.5]]) and np.array_equal(b0, [0.5, 0.5])
    assert np.array_equal(w1, [[2.0, 2.0]]) and np.array_equal(b1, [2.0])


def test_network_filter_and_parameter_scopes():
    network = attenuate(_theta(), ModulationParams(Scope.NETWORK, (constant(0.25),)))
    assert all(np.all(w == 0.25) and np.all(b == 0.25) for w, b in network.arrays())

    filters = attenuate(_theta(), ModulationParams(Scope.FILTER, (constant([0.0, 3.0]), constant([0.5]))))
    (w0, b0), (w1, b1) = filters.arrays()
    assert np.array_equal(w0, [[0.0], [3.0]]) and np.array_equal(b0, [0.0, 3.0])
    assert np.array_equal(w1, [[0.5, 0.5]]) and np.array_equal(b1, [0.5])

    gammas = ((constant([[2.0], [0.0]]), constant([1.0, 4.0])), (constant([[1.0, 0.5]]), constant([0.0])))
    (w0, b0), (w1, b1) = attenuate(_theta(), ModulationParams(Scope.PARAMETER, gammas)).arrays()
    assert np.array_equal(w0, [[2.0], [0.0]]) and np.array_equal(b0, [1.0, 4.0])
    assert np.array_equal(w1, [[1.0, 0.5]]) and np.array_equal(b1, [0.0])


def test_affine_attenuation_adds_delta():
    modulation = ModulationParams(Scope.LAYER, (constant(2.0), constant(1.0)), (constant(-1.0), constant(0.5)))
    (w0, b0), (w1, b1) = attenuate(_theta(), modulation).arrays()
    assert np.array_equal(w0, [[1.0], [1.0]]) and np.array_equal(b1, [1.5])


def test_scope_none_returns_theta():
    theta = _theta()
    assert attenuate(theta, ModulationParams(Scope.NONE, ())) is theta


def test_attenuation_granularity_must_match():
    with pytest.raises(ShapeError):
        attenuate(_theta(), ModulationParams(Scope.LAYER, (constant(0.5),)))
    with pytest.raises(ShapeError):
        attenuate(_theta(), ModulationParams(Scope.FILTER, (constant([1.0, 1.0, 1.0]), constant([1.0]))))


def test_attenuation_is_differentiable_in_gamma_and_theta():
    theta = _theta()
    gamma = variable(0.5)
    scaled = attenuate(theta, ModulationParams(Scope.NETWORK, (gamma,)))
    total = sum(n.value.sum() for n in theta.nodes())
    loss = sum_all(scaled.nodes()[0])
    for node in scaled.nodes()[1:]:
        loss = add(loss, sum_all(node))
    (g_gamma, g_w0) = grad(loss, [gamma, theta.nodes()[0]])
    assert g_gamma.item() == pytest.approx(total)
    assert np.allclose(g_w0.value, 0.5)


# INNER LOOP

def test_inner_adapt_scalar_trace():
    result = inner_adapt(scalar_network(1.0), scalar_network(1.0).params, scalar_task(0.0, 0.0).support, 2, 0.01)
    assert result.params.arrays()[0][1][0] == pytest.approx(0.9604)
    assert result.losses == pytest.approx([1.0, 0.9604, 0.9604 ** 2])


def test_inner_adapt_zero_steps_is_identity():
    network = scalar_network(1.5)
    result = inner_adapt(network, network.params, scalar_task(0.0, 0.0).support, 0, 0.1)
    assert result.params is network.params
    assert result.losses == [pytest.approx(2.25)]


def test_inner_adapt_reports_the_failing_step():
    network = scalar_network(1.0)
    with pytest.raises(AdaptationError) as info:
        inner_adapt(network, network.params, scalar_task(0.0, 0.0).support, 3, 1e300)
    assert info.value.step == 1


@pytest.mark.parametrize('theta, target', [(3.0, -1.0), (-0.4, 0.9), (0.0, 2.5)])
def test_support_loss_trace_does_not_increase_for_small_steps(theta, target):
    network = scalar_network(theta)
    losses = inner_adapt(network, network.params, scalar_task(target, 0.0).support, 10, 0.1).losses
    assert len(losses) == 11
    assert all(later <= earlier for earlier, later in zip(losses, losses[1:]))


def test_negative_step_count_is_rejected():
    with pytest.raises(ConfigurationError):
        inner_adapt(scalar_network(1.0), scalar_network(1.0).params, scalar_task(0.0, 0.0).support, -1, 0.01)


# META-GRADIENTS

def _theta_grad(config, theta, s, q):
    network = scalar_network(theta)
    loss = meta_loss(config, network, [scalar_task(s, q)])
    return grad(loss, [network.params.layers[0][1]])[0].value[0]


def test_zero_inner_steps_gives_the_query_gradient():
    config = MetaConfig(method=Method.MAML, inner_steps_train=0)
    assert _theta_grad(config, 1.0, 0.3, -2.0) == pytest.approx(6.0)


@pytest.mark.parametrize('theta, s, q, alpha', [(1.0, 0.0, 0.5, 0.1), (-0.7, 1.2, 0.3, 0.05), (2.0, -1.0, 1.0, 0.2)])
def test_scalar_meta_gradient_closed_form(theta, s, q, alpha):
    second = MetaConfig(method=Method.MAML, inner_lr=alpha, order=Order.SECOND)
    first = MetaConfig(method=Method.MAML, inner_lr=alpha, order=Order.FIRST)
    adapted = theta - 2.0 * alpha * (theta - s)
    assert _theta_grad(second, theta, s, q) == pytest.approx(2.0 * (adapted - q) * (1.0 - 2.0 * alpha), abs=1e-12)
    assert _theta_grad(first, theta, s, q) == pytest.approx(2.0 * (adapted - q), abs=1e-12)


def test_first_and_second_order_agree_without_inner_steps(rng):
    task = Task(rng.uniform(-1, 1, (4, 2)), rng.uniform(-1, 1, (4, 1)), rng.uniform(-1, 1, (4, 2)),
                rng.uniform(-1, 1, (4, 1)))
    network = TaskNetwork((2, 1), LayeredParams.from_arrays([(rng.uniform(-1, 1, (1, 2)), np.zeros(1))]))
    grads = []
    for order in Order:
        loss = meta_loss(MetaConfig(method=Method.MAML, inner_steps_train=0, order=order), network, [task])
        grads.append([g.value for g in grad(loss, network.params.nodes())])
    assert all(np.array_equal(a, b) for a, b in zip(*grads))


def test_second_order_meta_gradient_matches_finite_differences(rng):
    # non-negative inputs and weights keep every hidden unit away from the relu kink
    task = Task(rng.uniform(0, 1, (4, 2)), rng.uniform(-1, 1, (4, 1)), rng.uniform(0, 1, (4, 2)),
                rng.uniform(-1, 1, (4, 1)))
    config = MetaConfig(method=Method.MAML, inner_steps_train=3, inner_lr=0.05)

    def f(w0, b0, w1, b1):
        network = TaskNetwork((2, 3, 1), LayeredParams(((w0, b0), (w1, b1))))
        return meta_loss(config, network, [task])

    point = [rng.uniform(0.2, 1.0, (3, 2)), rng.uniform(0.1, 0.5, 3), rng.uniform(-1, 1, (1, 3)), np.zeros(1)]
    assert finite_difference_check(f, point) < 1e-5


def test_l2f_meta_gradient_reaches_the_attenuator():
    learner = MetaLearner.initialize(MetaConfig(method=Method.L2F, meta_batch_size=2, seed=3, progress=False),
                                     sizes=SMALL_SIZES)
    tasks = TaskSampler(STANDARD, 3)(0, 2)
    batch = learner.batch(tasks)
    phi = learner.attenuator.params.nodes()
    grads = grad(batch.loss, phi)
    assert any(np.any(g.value != 0.0) for g in grads)
    assert len(batch.modulations) == 2


def test_meta_batch_sums_in_task_order():
    network = scalar_network(0.0)
    config = MetaConfig(method=Method.MAML, inner_steps_train=0)
    tasks = [scalar_task(0.0, 1.0), scalar_task(0.0, 2.0)]
    assert meta_batch(config, network, tasks).loss.item() == pytest.approx(5.0)
    with pytest.raises(ConfigurationError):
        meta_batch(config, network, [])


def test_adaptation_error_names_the_task():
    config = MetaConfig(method=Method.MAML, inner_steps_train=2, inner_lr=1e300)
    tasks = [scalar_task(0.0, 0.0), scalar_task(1.0, 0.0)]
    with pytest.raises(AdaptationError) as info:
        meta_loss(config, scalar_network(1.0), tasks)
    assert info.value.task_index == 0


# CONFIGURATION AND OPTIMIZER

@pytest.mark.parametrize('overrides, field', [
    (dict(method='l2f', transform='raw-gamma'), 'transform'),
    (dict(method='maml', gamma_identity=True), 'gamma_identity'),
    (dict(method='learned-scope', gamma_identity=True), 'gamma_identity'),
    (dict(inner_lr=0.0), 'inner_lr'),
    (dict(meta_batch_size=0), 'meta_batch_size'),
    (dict(inner_steps_eval=()), 'inner_steps_eval'),
])
def test_invalid_meta_config(overrides, field):
    with pytest.raises(ConfigurationError) as info:
        MetaConfig(**overrides).validate()
    assert info.value.field == field


def test_transform_variant_accepts_every_transform():
    for transform in Transform:
        MetaConfig(method=Method.TRANSFORM_VARIANT, transform=transform).validate()


def test_unknown_enum_value():
    with pytest.raises(ValueError):
        MetaConfig(method='reptile')


def test_adam_first_step_moves_by_the_learning_rate():
    adam = Adam([(3,)], learning_rate=0.01)
    (updated,) = adam.step([np.zeros(3)], [np.array([2.0, -0.5, 1e-3])])
    assert np.allclose(updated, [-0.01, 0.01, -0.01], rtol=1e-4)
    assert adam.t == 1


def test_summarize():
    mean, ci = summarize([1.0, 2.0, 3.0, 4.0])
    assert mean == pytest.approx(2.5)
    assert ci == pytest.approx(1.96 * np.std([1.0, 2.0, 3.0, 4.0], ddof=1) / 2.0)
    assert summarize([7.0]) == (7.0, 0.0)


# LEARNER

def test_zero_iterations_leave_parameters_untouched(small_config):
    learner = MetaLearner.initialize(small_config(), sizes=SMALL_SIZES)
    before = _all_arrays(learner)
    assert learner.meta_train(TaskSampler(STANDARD, 7), iterations=0) == []
    assert all(np.array_equal(a, b) for a, b in zip(before, _all_arrays(learner)))


def test_training_is_deterministic(small_config):
    runs = []
    for _ in range(2):
        learner = MetaLearner.initialize(small_config(method=Method.L2F), sizes=SMALL_SIZES)
        records = learner.meta_train(TaskSampler(STANDARD, 7))
        runs.append((_all_arrays(learner), [r.outer_loss for r in records]))
    assert all(np.array_equal(a, b) for a, b in zip(runs[0][0], runs[1][0]))
    assert runs[0][1] == runs[1][1]


def test_identity_attenuation_follows_the_maml_trajectory(small_config):
    sampler = TaskSampler(STANDARD, 7)
    maml = MetaLearner.initialize(small_config(iterations=10), sizes=SMALL_SIZES)
    l2f = MetaLearner.initialize(small_config(method=Method.L2F, gamma_identity=True, iterations=10),
                                 sizes=SMALL_SIZES)
    maml_losses = [r.outer_loss for r in maml.meta_train(sampler)]
    l2f_records = l2f.meta_train(sampler)
    assert np.allclose(maml_losses, [r.outer_loss for r in l2f_records], rtol=0, atol=1e-10)
    for a, b in zip(maml.network.params.nodes(), l2f.network.params.nodes()):
        assert np.allclose(a.value, b.value, rtol=0, atol=1e-10)
    assert all(r.gamma_mean == [1.0, 1.0, 1.0] for r in l2f_records)


def test_training_reduces_the_loss_on_a_fixed_batch(small_config):
    tasks = TaskSampler(STANDARD, 11)(0, 2)
    learner = MetaLearner.initialize(small_config(meta_lr=0.01, iterations=60), sizes=SMALL_SIZES)
    losses = [r.outer_loss for r in learner.meta_train(lambda iteration, size: tasks)]
    assert np.mean(losses[-5:]) < losses[0]


def test_divergence_writes_the_last_finite_state(small_config, tmp_path):
    bad = Task(np.zeros((2, 1)), np.zeros((2, 1)), np.zeros((2, 1)), np.full((2, 1), 1e200))
    learner = MetaLearner.initialize(small_config(), sizes=SMALL_SIZES)
    path = str(tmp_path / 'checkpoint.npz')
    errors = []
    learner.events.subscribe(on_error=errors.append)
    with pytest.raises(DivergenceError) as info:
        learner.meta_train(lambda iteration, size: [bad] * size, checkpoint_path=path)
    assert info.value.iteration == 0
    assert info.value.checkpoint == path
    assert os.path.exists(path)
    assert len(errors) == 1


def test_records_and_gamma_events(small_config):
    learner = MetaLearner.initialize(small_config(method=Method.L2F, meta_batch_size=4, iterations=10),
                                     sizes=SMALL_SIZES)
    records, gammas = [], []
    learner.events.subscribe(records.append)
    learner.gammas.subscribe(gammas.append)
    learner.meta_train(TaskSampler(STANDARD, 7))
    assert [r.iteration for r in records] == list(range(10))
    assert len(gammas) == 120
    assert {g.phase for g in gammas} == {'train'}
    assert all(0.0 < g.gamma < 1.0 for g in gammas)
    assert all(len(r.task_gammas) == 4 and len(r.gamma_mean) == 3 for r in records)
    assert learner.iteration == 10


def test_validation_runs_on_its_interval(small_config):
    learner = MetaLearner.initialize(small_config(iterations=4, validate_every=2), sizes=SMALL_SIZES)
    validation = stream_factory(STANDARD, 7, curves=2, repeats=1, query_size=10, stream='validation')
    records = learner.meta_train(TaskSampler(STANDARD, 7), validation=validation)
    metrics = [r.validation_metric for r in records]
    assert metrics[0] is None and metrics[2] is None
    assert all(np.isfinite(m) and m >= 0.0 for m in (metrics[1], metrics[3]))


def test_maml_publishes_no_gammas(small_config):
    learner = MetaLearner.initialize(small_config(), sizes=SMALL_SIZES)
    gammas = []
    learner.gammas.subscribe(gammas.append)
    records = learner.meta_train(TaskSampler(STANDARD, 7))
    assert gammas == []
    assert all(r.gamma_mean == [] for r in records)


def test_learner_requires_its_attenuator(small_config):
    learner = MetaLearner.initialize(small_config(), sizes=SMALL_SIZES)
    with pytest.raises(ConfigurationError):
        MetaLearner(learner.network, small_config(method=Method.L2F))


@pytest.mark.parametrize('scope', [Scope.NETWORK, Scope.LAYER, Scope.FILTER, Scope.PARAMETER])
def test_learned_scope_updates_its_attenuation(small_config, scope):
    learner = MetaLearner.initialize(small_config(method=Method.LEARNED_SCOPE, scope=scope, meta_lr=0.01),
                                     sizes=SMALL_SIZES)
    learner.meta_train(TaskSampler(STANDARD, 7))
    assert any(np.any(g != 1.0) for g in learner.attenuation.arrays())


@pytest.mark.parametrize('transform', [Transform.RAW_GAMMA, Transform.AFFINE, Transform.SIGMOIDED_GAMMA])
def test_transform_variants_train(small_config, transform):
    learner = MetaLearner.initialize(small_config(method=Method.TRANSFORM_VARIANT, transform=transform),
                                     sizes=SMALL_SIZES)
    records = learner.meta_train(TaskSampler(STANDARD, 7))
    assert all(np.isfinite(r.outer_loss) for r in records)
    assert learner.attenuator.transform is transform


def test_state_round_trips_through_a_checkpoint(small_config, tmp_path):
    learner = MetaLearner.initialize(small_config(method=Method.L2F), sizes=SMALL_SIZES)
    learner.meta_train(TaskSampler(STANDARD, 7))
    restored = MetaLearner.from_checkpoint(load_checkpoint(learner.save(str(tmp_path / 'c.npz'))),
                                           small_config(method=Method.L2F))
    assert all(np.array_equal(a, b) for a, b in zip(_all_arrays(learner), _all_arrays(restored)))


# EVALUATION

def test_exact_fit_has_zero_error(small_config):
    learner = MetaLearner(scalar_network(2.0), small_config())
    table = learner.evaluate([EvalSample(scalar_task(2.0, 2.0), 0, 0)], steps=[0, 1])
    assert table.metric == 'mse'
    assert [(r.steps, r.mean, r.ci95, r.count) for r in table.rows] == [(0, 0.0, 0.0, 1), (1, 0.0, 0.0, 1)]


def test_evaluation_table_rows(small_config):
    learner = MetaLearner.initialize(small_config(inner_steps_eval=(5, 1, 2)), sizes=SMALL_SIZES)
    table = learner.evaluate(eval_protocol(STANDARD, 7, curves=2, repeats=3, query_size=10))
    assert [r.steps for r in table.rows] == [1, 2, 5]
    assert all(r.count == 6 for r in table.rows)
    assert table.row(2).mean >= 0.0
    assert 'mse' in table.format()
    with pytest.raises(KeyError):
        table.row(3)


def test_identity_attenuation_evaluates_like_maml(small_config):
    samples = list(eval_protocol(STANDARD, 7, curves=3, repeats=2, query_size=20))
    maml = MetaLearner.initialize(small_config(), sizes=SMALL_SIZES)
    l2f = MetaLearner.initialize(small_config(method=Method.L2F, gamma_identity=True), sizes=SMALL_SIZES)
    for a, b in zip(maml.evaluate(samples, steps=[0, 1, 5]).rows, l2f.evaluate(samples, steps=[0, 1, 5]).rows):
        assert a.mean == pytest.approx(b.mean, abs=1e-12)


def test_evaluation_publishes_eval_gammas(small_config):
    learner = MetaLearner.initialize(small_config(method=Method.L2F), sizes=SMALL_SIZES)
    gammas = []
    learner.gammas.subscribe(gammas.append)
    learner.evaluate(eval_protocol(STANDARD, 7, curves=2, repeats=2, query_size=5), steps=[1])
    assert len(gammas) == 12
    assert {g.phase for g in gammas} == {'eval'}
    assert {g.task_id for g in gammas} == {0, 1, 1_000_000, 1_000_001}


def test_classification_learner(small_config):
    spec = ClassificationSpec(n_way=3, k=2, m=2, dim=4)
    learner = MetaLearner.initialize(small_config(method=Method.L2F, inner_lr=0.1), sizes=(4, 8, 3),
                                     head=Head.CLASSIFICATION)
    records = learner.meta_train(TaskSampler(spec, 7))
    assert all(np.isfinite(r.outer_loss) for r in records)
    table = learner.evaluate(eval_protocol(spec, 7, curves=2, repeats=2, query_size=3), steps=[0, 1])
    assert table.metric == 'accuracy'
    assert all(0.0 <= r.mean <= 1.0 for r in table.rows)
