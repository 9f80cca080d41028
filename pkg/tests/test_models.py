import numpy as np
import pytest

from l2f.autodiff import constant, finite_difference_check, grad, mul, stack, sum_all, variable
from l2f.exceptions import ConfigurationError, ShapeError
from l2f.models import (REGRESSION_SIZES, Attenuator, LayeredParams, TaskNetwork, init_attenuator, init_layers,
                        init_learned_attenuation, init_task_network, layer_modulation, layerwise_grad_mean,
                        scale_filters, support_gradients)
from l2f.schema import GradSummary, Head, Scope, Transform


def test_regression_network_shapes():
    network = init_task_network(0)
    assert network.sizes == REGRESSION_SIZES
    assert network.layer_count == 3
    assert network.params.shapes() == [((40, 1), (40,)), ((40, 40), (40,)), ((1, 40), (1,))]
    assert network.params.parameter_count == 1761


def test_biases_start_at_zero_and_weights_are_glorot_bounded():
    params = init_layers(3, (1, 40, 40, 1))
    for (weight, bias), (fan_in, fan_out) in zip(params.arrays(), [(1, 40), (40, 40), (40, 1)]):
        assert np.all(bias == 0.0)
        assert np.all(np.abs(weight) <= np.sqrt(6.0 / (fan_in + fan_out)))


def test_initialization_is_seeded():
    first = init_layers(11, (1, 8, 1)).arrays()
    second = init_layers(11, (1, 8, 1)).arrays()
    other = init_layers(12, (1, 8, 1)).arrays()
    assert all(np.array_equal(a[0], b[0]) for a, b in zip(first, second))
    assert not np.array_equal(first[0][0], other[0][0])


@pytest.mark.parametrize('sizes', [(1,), (1, 0, 1), (3, -2)])
def test_invalid_sizes_are_rejected(sizes):
    with pytest.raises(ConfigurationError):
        init_layers(0, sizes)


def test_layers_must_chain():
    with pytest.raises(ShapeError):
        LayeredParams.from_arrays([(np.ones((4, 1)), np.zeros(4)), (np.ones((1, 3)), np.zeros(1))])


def test_forward_checks_input_width():
    network = init_task_network(0)
    assert network.forward(network.params, np.zeros((7, 1))).shape == (7, 1)
    with pytest.raises(ShapeError, match='forward'):
        network.forward(network.params, np.zeros((7, 2)))


def test_output_layer_is_linear():
    params = LayeredParams.from_arrays([(np.array([[1.0]]), np.array([-5.0])), (np.array([[2.0]]), np.array([-1.0]))])
    network = TaskNetwork((1, 1, 1), params)
    # hidden relu clips to zero, output keeps its negative bias
    assert network.forward(params, np.array([[1.0]])).value[0, 0] == pytest.approx(-1.0)


def test_classification_metric_is_accuracy():
    weight = np.eye(2)
    network = TaskNetwork((2, 2), LayeredParams.from_arrays([(weight, np.zeros(2))]), Head.CLASSIFICATION)
    x = np.array([[1.0, 0.0], [0.0, 1.0], [2.0, 0.0], [0.0, 3.0]])
    assert network.metric(network.params, x, np.array([0, 1, 1, 1])) == pytest.approx(0.75)
    assert network.loss(network.params, x, np.array([0, 1, 0, 1])).item() > 0.0


def test_regression_metric_is_mse():
    network = TaskNetwork((1, 1), LayeredParams.from_arrays([(np.zeros((1, 1)), np.array([1.0]))]))
    assert network.metric(network.params, np.zeros((2, 1)), np.array([[0.0], [3.0]])) == pytest.approx(2.5)


def test_layerwise_grad_mean_averages_weight_and_bias_together():
    grads = [(constant([[1.0, 2.0], [3.0, 4.0]]), constant([2.0, -2.0])),
             (constant([[-6.0, 0.0]]), constant([0.0]))]
    assert np.allclose(layerwise_grad_mean(grads).value, [10.0 / 6.0, -2.0])
    assert np.allclose(layerwise_grad_mean(grads, GradSummary.ABSOLUTE).value, [14.0 / 6.0, 2.0])


def test_support_gradients_pair_per_layer():
    network = init_task_network(0, (1, 8, 8, 1))
    x = np.linspace(-1.0, 1.0, 5).reshape(-1, 1)
    grads = support_gradients(network, network.params, x, np.sin(x), create_graph=False)
    assert [(w.shape, b.shape) for w, b in grads] == network.params.shapes()


def test_generated_gamma_lies_in_the_unit_interval(rng):
    attenuator = init_attenuator(0, 3)
    for _ in range(50):
        modulation = attenuator.generate_gamma(constant(rng.standard_normal(3) * 5.0))
        values = modulation.layer_values(3)
        assert len(values) == 3
        assert all(0.0 < v < 1.0 for v in values)
        assert modulation.deltas is None


def test_attenuator_architecture():
    attenuator = init_attenuator(0, 3, Transform.AFFINE)
    assert attenuator.params.sizes() == (3, 3, 3, 6)
    modulation = attenuator.generate_gamma(constant([0.1, 0.2, 0.3]))
    assert len(modulation.gammas) == 3
    assert len(modulation.delta_values()) == 3


def test_generate_gamma_checks_summary_length():
    with pytest.raises(ShapeError):
        init_attenuator(0, 3).generate_gamma(constant([0.1, 0.2]))


@pytest.mark.parametrize('transform', Transform.values())
def test_forced_identity_is_exact(transform, rng):
    attenuator = init_attenuator(5, 3, transform).force_identity()
    modulation = attenuator.generate_gamma(constant(rng.standard_normal(3)))
    assert modulation.layer_values(3) == [1.0, 1.0, 1.0]
    if transform == Transform.AFFINE.value:
        assert modulation.delta_values() == [0.0, 0.0, 0.0]


def test_layer_modulation_holds_constants():
    modulation = layer_modulation([0.5, 1.0, 0.25])
    assert modulation.scope is Scope.LAYER
    assert modulation.layer_values(3) == [0.5, 1.0, 0.25]
    assert not any(g.requires_grad for g in modulation.gammas)


@pytest.mark.parametrize('scope, count, first_shape', [
    (Scope.NETWORK, 1, ()),
    (Scope.LAYER, 3, ()),
    (Scope.FILTER, 3, (8,)),
    (Scope.PARAMETER, 6, (8, 1)),
    (Scope.NONE, 0, None),
])
def test_learned_attenuation_groups(scope, count, first_shape):
    network = init_task_network(0, (1, 8, 8, 1))
    attenuation = init_learned_attenuation(network.params, scope)
    assert len(attenuation.gammas) == count
    if count:
        assert attenuation.gammas[0].shape == first_shape
        assert all(np.all(g.value == 1.0) for g in attenuation.gammas)
        assert attenuation.modulation().layer_values(3) == [1.0, 1.0, 1.0]
    else:
        assert attenuation.modulation() is None


def test_scale_filters_scales_rows():
    weight = variable(np.ones((3, 2)))
    scaled = scale_filters(weight, constant([0.0, 0.5, 2.0]))
    assert np.array_equal(scaled.value, [[0.0, 0.0], [0.5, 0.5], [2.0, 2.0]])


def test_step_returns_graph_nodes():
    params = LayeredParams.from_arrays([(np.ones((1, 1)), np.array([2.0]))])
    stepped = params.step([constant([[1.0]]), constant([4.0])], 0.5)
    (weight, bias), = stepped.arrays()
    assert np.allclose(weight, [[0.5]])
    assert np.allclose(bias, [0.0])
    assert all(node.requires_grad for node in stepped.nodes())


def _reference_mlp(arrays, x):
    h = x
    for j, (weight, bias) in enumerate(arrays):
        h = h @ weight.T + bias
        if j < len(arrays) - 1:
            h = np.maximum(h, 0.0)
    return h


def _positive_layers(rng, sizes):
    return [(rng.uniform(0.1, 0.5, (fan_out, fan_in)), rng.uniform(0.1, 0.5, fan_out))
            for fan_in, fan_out in zip(sizes[:-1], sizes[1:])]


def test_forward_matches_a_numpy_mlp(rng):
    network = init_task_network(3, (1, 40, 40, 1))
    x = rng.uniform(-5.0, 5.0, (20, 1))
    expected = _reference_mlp(network.params.arrays(), x)
    assert np.allclose(network.forward(network.params, x).value, expected, rtol=0.0, atol=1e-12)


@pytest.mark.parametrize('transform', Transform.values())
def test_generate_gamma_matches_a_numpy_mlp(transform, rng):
    attenuator = init_attenuator(4, 3, transform)
    summary = rng.standard_normal(3)
    out = _reference_mlp(attenuator.params.arrays(), summary.reshape(1, 3)).ravel()
    modulation = attenuator.generate_gamma(constant(summary))
    if transform == Transform.SIGMOIDED_GAMMA.value:
        out = 1.0 / (1.0 + np.exp(-out))
    assert np.allclose(modulation.layer_values(3), out[:3], rtol=0.0, atol=1e-12)
    if transform == Transform.AFFINE.value:
        assert np.allclose(modulation.delta_values(), out[3:], rtol=0.0, atol=1e-12)


@pytest.mark.parametrize('transform, expected', [(Transform.SIGMOIDED_GAMMA, 0.5), (Transform.RAW_GAMMA, 0.0)])
def test_zero_attenuator_output(transform, expected, rng):
    zeros = LayeredParams.from_arrays([(np.zeros((3, 3)), np.zeros(3)) for _ in range(3)])
    modulation = Attenuator(zeros, transform, 3).generate_gamma(constant(rng.standard_normal(3)))
    assert modulation.layer_values(3) == [expected] * 3


def test_generated_gamma_stays_inside_the_unit_interval_across_attenuators(rng):
    for seed in range(1000):
        values = init_attenuator(seed, 3).generate_gamma(constant(rng.standard_normal(3))).layer_values(3)
        assert all(0.0 < v < 1.0 for v in values)


@pytest.mark.parametrize('transform', Transform.values())
def test_generate_gamma_matches_finite_differences(transform, rng):
    layers = _positive_layers(rng, (3, 3, 3, 6 if transform == Transform.AFFINE.value else 3))
    point = [rng.uniform(0.1, 1.0, 3)] + [a for pair in layers for a in pair]
    weights = constant(rng.uniform(0.5, 1.5, 6 if transform == Transform.AFFINE.value else 3))
    attenuator = Attenuator(LayeredParams.from_arrays(layers), Transform.parse(transform), 3)

    def f(summary, *phi):
        modulation = attenuator.generate_gamma(summary, LayeredParams.from_nodes(phi))
        outputs = list(modulation.gammas) + list(modulation.deltas or ())
        return sum_all(mul(stack(outputs), weights))

    assert finite_difference_check(f, point) < 1e-6


def test_forward_matches_finite_differences(rng):
    network = TaskNetwork((1, 4, 4, 1), init_layers(0, (1, 4, 4, 1)))
    layers = _positive_layers(rng, network.sizes)
    x = rng.uniform(0.1, 1.0, (6, 1))
    weights = constant(rng.uniform(0.5, 1.5, (6, 1)))

    def f(*theta):
        return sum_all(mul(network.forward(LayeredParams.from_nodes(theta), x), weights))

    assert finite_difference_check(f, [a for pair in layers for a in pair]) < 1e-6


def test_gradient_of_a_batch_is_the_sum_over_its_examples(rng):
    network = init_task_network(2, (1, 8, 8, 1))
    x = rng.uniform(-5.0, 5.0, (6, 1))
    y = np.sin(x)
    batch = grad(network.loss(network.params, x, y), network.params.nodes())
    per_example = [grad(network.loss(network.params, x[i:i + 1], y[i:i + 1]), network.params.nodes())
                   for i in range(6)]
    for j, g in enumerate(batch):
        total = np.sum([gs[j].value for gs in per_example], axis=0)
        assert np.allclose(6.0 * g.value, total, rtol=1e-10, atol=1e-12)
