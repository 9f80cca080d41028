"""Task network f_theta, attenuator g_phi and their layer-structured parameters."""

from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from l2f.autodiff import (Node, absolute, add, broadcast_axis, constant, grad, index, matmul, mse, mul,
                          relu, reshape, sigmoid, softmax_cross_entropy, stack, sub, sum_all, transpose,
                          variable)
from l2f.exceptions import ConfigurationError, ShapeError
from l2f.schema import GradSummary, Head, Scope, Transform

REGRESSION_SIZES = (1, 40, 40, 1)

# sigmoid(40.0) rounds to exactly 1.0 in float64
IDENTITY_LOGIT = 40.0


@dataclass(frozen=True)
class LayeredParams:
    """
    Parameters partitioned into layers, ``theta = {theta^j}``.

    Each layer is a ``(weight [out x in], bias [out])`` pair of nodes; layer ``j`` is the unit
    of attenuation and always means the weight matrix and its bias together.
    """
    layers: Tuple[Tuple[Node, Node], ...]

    def __post_init__(self):
        if len(self.layers) < 1:
            raise ShapeError('LayeredParams', ())
        for j, (weight, bias) in enumerate(self.layers):
            if weight.ndim != 2 or bias.shape != (weight.shape[0],):
                raise ShapeError(f'LayeredParams layer {j}', weight.shape, bias.shape)
            if j > 0 and self.layers[j - 1][0].shape[0] != weight.shape[1]:
                raise ShapeError(f'LayeredParams layer {j}', self.layers[j - 1][0].shape, weight.shape)

    @classmethod
    def from_arrays(cls, arrays: Sequence[Tuple[np.ndarray, np.ndarray]], trainable: bool = True) -> 'LayeredParams':
        leaf = variable if trainable else constant
        return cls(tuple((leaf(w), leaf(b)) for w, b in arrays))

    @classmethod
    def from_nodes(cls, nodes: Sequence[Node]) -> 'LayeredParams':
        """Inverse of :meth:`nodes`."""
        if len(nodes) % 2:
            raise ShapeError('LayeredParams.from_nodes', (len(nodes),))
        return cls(tuple((nodes[i], nodes[i + 1]) for i in range(0, len(nodes), 2)))

    @property
    def layer_count(self) -> int:
        return len(self.layers)

    @property
    def parameter_count(self) -> int:
        return sum(w.size + b.size for w, b in self.layers)

    def nodes(self) -> List[Node]:
        return [node for layer in self.layers for node in layer]

    def arrays(self) -> List[Tuple[np.ndarray, np.ndarray]]:
        return [(w.numpy(), b.numpy()) for w, b in self.layers]

    def shapes(self) -> List[Tuple[tuple, tuple]]:
        return [(w.shape, b.shape) for w, b in self.layers]

    def sizes(self) -> Tuple[int, ...]:
        return (self.layers[0][0].shape[1],) + tuple(w.shape[0] for w, _ in self.layers)

    def variables(self) -> 'LayeredParams':
        """Fresh trainable leaves holding the current values."""
        return LayeredParams.from_arrays(self.arrays(), trainable=True)

    def detach(self) -> 'LayeredParams':
        return LayeredParams(tuple((w.detach(), b.detach()) for w, b in self.layers))

    def step(self, grads: Sequence[Node], learning_rate: float) -> 'LayeredParams':
        """One gradient-descent step, ``theta - learning_rate * grads``, as graph nodes."""
        rate = constant(learning_rate)
        updated = [sub(node, mul(g, rate)) for node, g in zip(self.nodes(), grads)]
        return LayeredParams.from_nodes(updated)


def glorot_uniform(rng: np.random.Generator, fan_out: int, fan_in: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_out, fan_in))


def init_layers(seed: int, sizes: Sequence[int]) -> LayeredParams:
    """Glorot-uniform weights and zero biases for an MLP with the given layer sizes."""
    sizes = tuple(int(s) for s in sizes)
    if len(sizes) < 2:
        raise ConfigurationError('sizes', f'need an input and at least one layer, got {list(sizes)}')
    if any(s <= 0 for s in sizes):
        raise ConfigurationError('sizes', f'layer sizes must be positive, got {list(sizes)}')
    rng = np.random.default_rng(seed)
    arrays = [(glorot_uniform(rng, fan_out, fan_in), np.zeros(fan_out))
              for fan_in, fan_out in zip(sizes[:-1], sizes[1:])]
    return LayeredParams.from_arrays(arrays)


def mlp(params: LayeredParams, x: Node) -> Node:
    """ReLU MLP with an identity output layer."""
    last = params.layer_count - 1
    h = x
    for j, (weight, bias) in enumerate(params.layers):
        h = add(matmul(h, transpose(weight)), bias)
        if j < last:
            h = relu(h)
    return h


@dataclass
class TaskNetwork:
    """
    The task network f_theta.

    :param sizes: layer sizes, input first
    :param params: initialization theta
    :param head: identity regression output or softmax-cross-entropy classification
    """
    sizes: Tuple[int, ...]
    params: LayeredParams
    head: Head = Head.REGRESSION

    @property
    def layer_count(self) -> int:
        return len(self.sizes) - 1

    def forward(self, params: LayeredParams, x) -> Node:
        """
        Forward pass rooted at ``params``.

        :param params: parameters to evaluate with (theta, an attenuated or an adapted copy)
        :param x: ``[batch x in]`` inputs
        """
        x = x if isinstance(x, Node) else constant(x)
        if x.ndim != 2 or x.shape[1] != self.sizes[0]:
            raise ShapeError('forward', x.shape, (None, self.sizes[0]))
        return mlp(params, x)

    def loss(self, params: LayeredParams, x, y) -> Node:
        output = self.forward(params, x)
        if self.head is Head.CLASSIFICATION:
            return softmax_cross_entropy(output, y)
        return mse(output, y if isinstance(y, Node) else constant(y))

    def metric(self, params: LayeredParams, x, y) -> float:
        """Query metric: MSE for regression, accuracy for classification."""
        output = self.forward(params, x).value
        if self.head is Head.CLASSIFICATION:
            return float(np.mean(np.argmax(output, axis=1) == np.asarray(y)))
        return float(np.mean((output - np.asarray(y, dtype=np.float64)) ** 2))


def init_task_network(seed: int, sizes: Sequence[int] = REGRESSION_SIZES,
                      head: Head = Head.REGRESSION) -> TaskNetwork:
    """
    Create a task network with Glorot-uniform weights and zero biases.

    :param seed: initialization seed
    :param sizes: layer sizes, input first; ``[1, 40, 40, 1]`` is the regression network
    :param head: output head
    """
    params = init_layers(seed, sizes)
    return TaskNetwork(tuple(int(s) for s in sizes), params, Head.parse(head))


def layerwise_grad_mean(grads: Sequence[Tuple[Node, Node]],
                        summary: GradSummary = GradSummary.SIGNED) -> Node:
    """
    Layer-wise mean of gradients, the input of the attenuator.

    Entry ``j`` averages every scalar component of layer ``j``'s weight and bias gradients.
    ``GradSummary.ABSOLUTE`` averages magnitudes instead; it is an opt-in extension.

    :param grads: one ``(weight_grad, bias_grad)`` pair per layer
    :param summary: signed (published) or absolute mean
    :return: vector of length ``l``
    """
    entries = []
    for weight_grad, bias_grad in grads:
        if summary is GradSummary.ABSOLUTE:
            weight_grad, bias_grad = absolute(weight_grad), absolute(bias_grad)
        total = add(sum_all(weight_grad), sum_all(bias_grad))
        entries.append(mul(total, constant(1.0 / (weight_grad.size + bias_grad.size))))
    return stack(entries)


def pair_layers(nodes: Sequence[Node]) -> List[Tuple[Node, Node]]:
    return [(nodes[i], nodes[i + 1]) for i in range(0, len(nodes), 2)]


@dataclass(frozen=True)
class ModulationParams:
    """
    Attenuation applied to an initialization.

    ``gammas`` holds one entry per parameter group of ``scope``: one scalar node for the whole
    network, one scalar per layer, one ``[out]`` vector per layer (filter) or one
    ``(weight-shaped, bias-shaped)`` pair per layer (parameter). ``deltas`` holds one scalar
    per layer for the affine variant.
    """
    scope: Scope
    gammas: tuple
    deltas: Optional[tuple] = None

    def layer_values(self, layer_count: int) -> List[float]:
        """Mean gamma per layer, for logging."""
        if self.scope is Scope.NETWORK:
            return [float(np.mean(self.gammas[0].value))] * layer_count
        values = []
        for gamma in self.gammas:
            parts = gamma if isinstance(gamma, tuple) else (gamma,)
            total = sum(float(np.sum(p.value)) for p in parts)
            count = sum(p.size for p in parts)
            values.append(total / count)
        return values

    def delta_values(self) -> List[float]:
        return [float(d.value) for d in self.deltas] if self.deltas else []


def layer_modulation(gammas: Sequence[float]) -> ModulationParams:
    """Constant layer-wise attenuation, e.g. for a manual gamma sweep."""
    return ModulationParams(Scope.LAYER, tuple(constant(g) for g in gammas))


@dataclass
class Attenuator:
    """
    The attenuator g_phi: a 3-layer ReLU MLP of width ``l`` mapping the layer-wise gradient
    mean to one gamma per layer (and one delta per layer for the affine transform).
    """
    params: LayeredParams
    transform: Transform
    layer_count: int

    @property
    def output_dim(self) -> int:
        return 2 * self.layer_count if self.transform is Transform.AFFINE else self.layer_count

    def generate_gamma(self, grad_summary: Node, params: LayeredParams = None) -> ModulationParams:
        """
        Generate task-dependent attenuation from a gradient summary.

        :param grad_summary: length-``l`` output of :func:`layerwise_grad_mean`
        :param params: attenuator parameters to use, defaults to ``self.params``
        """
        params = params if params is not None else self.params
        l = self.layer_count
        if grad_summary.shape != (l,):
            raise ShapeError('generate_gamma', grad_summary.shape, (l,))
        out = reshape(mlp(params, reshape(grad_summary, (1, l))), (self.output_dim,))
        if self.transform is Transform.SIGMOIDED_GAMMA:
            out = sigmoid(out)
        gammas = tuple(index(out, j) for j in range(l))
        deltas = tuple(index(out, l + j) for j in range(l)) if self.transform is Transform.AFFINE else None
        return ModulationParams(Scope.LAYER, gammas, deltas)

    def force_identity(self) -> 'Attenuator':
        """Bias override: output weights zero and output bias chosen so gamma == 1 and delta == 0."""
        arrays = self.params.arrays()
        weight, bias = arrays[-1]
        weight = np.zeros_like(weight)
        bias = np.zeros_like(bias)
        l = self.layer_count
        bias[:l] = IDENTITY_LOGIT if self.transform is Transform.SIGMOIDED_GAMMA else 1.0
        arrays[-1] = (weight, bias)
        return Attenuator(LayeredParams.from_arrays(arrays), self.transform, l)


def init_attenuator(seed: int, layer_count: int,
                    transform: Transform = Transform.SIGMOIDED_GAMMA) -> Attenuator:
    transform = Transform.parse(transform)
    out = 2 * layer_count if transform is Transform.AFFINE else layer_count
    params = init_layers(seed, (layer_count, layer_count, layer_count, out))
    return Attenuator(params, transform, layer_count)


def scope_shapes(network_params: LayeredParams, scope: Scope) -> list:
    """Shapes of the attenuation groups of ``scope`` for a given network."""
    if scope is Scope.NETWORK:
        return [()]
    if scope is Scope.LAYER:
        return [() for _ in network_params.layers]
    if scope is Scope.FILTER:
        return [(w.shape[0],) for w, _ in network_params.layers]
    if scope is Scope.PARAMETER:
        return [(w.shape, b.shape) for w, b in network_params.layers]
    return []


@dataclass
class LearnedAttenuation:
    """
    Task-independent learnable attenuation of a given scope, initialized to 1 and updated by
    the outer loop only.
    """
    scope: Scope
    gammas: List[Node] = field(default_factory=list)

    def nodes(self) -> List[Node]:
        return list(self.gammas)

    def arrays(self) -> List[np.ndarray]:
        return [g.numpy() for g in self.gammas]

    def with_nodes(self, nodes: Sequence[Node]) -> 'LearnedAttenuation':
        return LearnedAttenuation(self.scope, list(nodes))

    def modulation(self) -> Optional[ModulationParams]:
        if self.scope is Scope.NONE:
            return None
        if self.scope is Scope.PARAMETER:
            return ModulationParams(self.scope, tuple(tuple(pair) for pair in pair_layers(self.gammas)))
        return ModulationParams(self.scope, tuple(self.gammas))


def init_learned_attenuation(network_params: LayeredParams, scope: Scope) -> LearnedAttenuation:
    scope = Scope.parse(scope)
    gammas = []
    for shape in scope_shapes(network_params, scope):
        if scope is Scope.PARAMETER:
            gammas.extend(variable(np.ones(s)) for s in shape)
        else:
            gammas.append(variable(np.ones(shape)))
    return LearnedAttenuation(scope, gammas)


def support_gradients(network: TaskNetwork, params: LayeredParams, x, y,
                      create_graph: bool) -> List[Tuple[Node, Node]]:
    """Support-set gradient at ``params``, paired per layer."""
    return pair_layers(grad(network.loss(params, x, y), params.nodes(), create_graph=create_graph))


def scale_filters(weight: Node, gamma: Node) -> Node:
    """Multiply every row of ``weight`` (one output unit) by the matching entry of ``gamma``."""
    return mul(weight, broadcast_axis(gamma, 1, weight.shape[1]))
