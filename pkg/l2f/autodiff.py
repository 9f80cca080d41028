"""
Reverse-mode automatic differentiation over small dense float64 tensors.

Every backward rule is written with the primitives of this module, so the
gradients returned by :func:`grad` with ``create_graph=True`` are themselves
graph nodes and can be differentiated again. This is what lets the outer loop
differentiate through inner-loop gradient steps.

Broadcasting is limited to bias-add (``[n x m] + [m]``) and scalar-times-tensor;
every other shape mismatch raises :class:`ShapeError`.
"""

from typing import Callable, List, Sequence

import numpy as np

from l2f.exceptions import GradientError, NumericalError, ShapeError

Tensor = np.ndarray


def as_tensor(value) -> Tensor:
    """Copy ``value`` into a fresh float64 array."""
    return np.array(value, dtype=np.float64)


class Node:
    """
    A value in a differentiable computation graph.

    :param value: float64 array holding the node's value
    :param parents: input nodes the value was computed from
    :param backward: rule mapping (grad, inputs, out, needs) to one gradient per input
    :param requires_grad: whether gradients flow into this node
    :param op: primitive name, for error messages and debugging
    """
    __slots__ = ('value', 'parents', 'backward', 'requires_grad', 'op')

    def __init__(self, value: Tensor, parents: tuple = (), backward: Callable = None,
                 requires_grad: bool = False, op: str = 'leaf'):
        self.value = value
        self.parents = parents
        self.backward = backward
        self.requires_grad = requires_grad
        self.op = op

    @property
    def shape(self) -> tuple:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    @property
    def size(self) -> int:
        return self.value.size

    def item(self) -> float:
        return float(self.value)

    def numpy(self) -> Tensor:
        return self.value.copy()

    def detach(self) -> 'Node':
        return Node(self.value, op=self.op)

    def __repr__(self):
        return f'Node(op={self.op}, shape={self.shape}, requires_grad={self.requires_grad})'

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        if isinstance(other, Node):
            raise TypeError('division is only defined by plain numbers')
        return mul(self, constant(1.0 / other))

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return neg(self)


def constant(value) -> Node:
    """Leaf node that does not require gradients."""
    return Node(as_tensor(value))


def variable(value) -> Node:
    """Leaf node that gradients flow into."""
    return Node(as_tensor(value), requires_grad=True)


def _node(value) -> Node:
    return value if isinstance(value, Node) else constant(value)


def _make(op: str, value: Tensor, parents: tuple, backward: Callable) -> Node:
    value = np.asarray(value, dtype=np.float64)
    if not np.all(np.isfinite(value)):
        raise NumericalError(op)
    if any(p.requires_grad for p in parents):
        return Node(value, parents, backward, True, op)
    return Node(value, op=op)


def _ones_like(node: Node) -> Node:
    return constant(np.ones(node.shape))


# ELEMENTWISE ARITHMETIC

def _is_bias_add(a: Node, b: Node) -> bool:
    return a.ndim == 2 and b.ndim == 1 and a.shape[1] == b.shape[0]


def add(a, b) -> Node:
    """
    Elementwise sum. ``b`` may be a bias vector added to every row of a matrix ``a``.
    """
    a, b = _node(a), _node(b)
    if a.shape == b.shape:
        return _make('add', a.value + b.value, (a, b), _add_backward)
    if _is_bias_add(a, b):
        return _make('add', a.value + b.value, (a, b), _bias_add_backward)
    raise ShapeError('add', a.shape, b.shape)


def _add_backward(grad, inputs, out, needs):
    return (grad if needs[0] else None,
            grad if needs[1] else None)


def _bias_add_backward(grad, inputs, out, needs):
    return (grad if needs[0] else None,
            sum_axis(grad, 0) if needs[1] else None)


def sub(a, b) -> Node:
    """Elementwise difference, with the same bias-add rule as :func:`add`."""
    a, b = _node(a), _node(b)
    if a.shape == b.shape:
        return _make('sub', a.value - b.value, (a, b), _sub_backward)
    if _is_bias_add(a, b):
        return _make('sub', a.value - b.value, (a, b), _bias_sub_backward)
    raise ShapeError('sub', a.shape, b.shape)


def _sub_backward(grad, inputs, out, needs):
    return (grad if needs[0] else None,
            neg(grad) if needs[1] else None)


def _bias_sub_backward(grad, inputs, out, needs):
    return (grad if needs[0] else None,
            neg(sum_axis(grad, 0)) if needs[1] else None)


def mul(a, b) -> Node:
    """Elementwise product; either operand may also be a scalar (shape ``()``)."""
    a, b = _node(a), _node(b)
    if a.shape == b.shape:
        return _make('mul', a.value * b.value, (a, b), _mul_backward)
    if a.ndim == 0 or b.ndim == 0:
        return _make('mul', a.value * b.value, (a, b), _scalar_mul_backward)
    raise ShapeError('mul', a.shape, b.shape)


def _mul_backward(grad, inputs, out, needs):
    a, b = inputs
    return (mul(grad, b) if needs[0] else None,
            mul(grad, a) if needs[1] else None)


def _scalar_mul_backward(grad, inputs, out, needs):
    a, b = inputs

    def _for(this, other):
        contribution = mul(grad, other)
        return sum_all(contribution) if this.ndim == 0 else contribution

    return (_for(a, b) if needs[0] else None,
            _for(b, a) if needs[1] else None)


def neg(x) -> Node:
    x = _node(x)
    return _make('neg', -x.value, (x,), _neg_backward)


def _neg_backward(grad, inputs, out, needs):
    return (neg(grad),)


def power(x, exponent: float) -> Node:
    """Elementwise ``x ** exponent`` for a constant real exponent."""
    x = _node(x)
    with np.errstate(divide='ignore', invalid='ignore'):
        value = np.power(x.value, exponent)
    return _make('power', value, (x,), _power_backward(exponent))


def _power_backward(exponent):
    def backward(grad, inputs, out, needs):
        (x,) = inputs
        return (mul(grad, mul(power(x, exponent - 1.0), constant(exponent))),)
    return backward


# LINEAR ALGEBRA AND SHAPES

def matmul(a, b) -> Node:
    """Matrix product of ``[n x k]`` and ``[k x m]``."""
    a, b = _node(a), _node(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError('matmul', a.shape, b.shape)
    return _make('matmul', a.value @ b.value, (a, b), _matmul_backward)


def _matmul_backward(grad, inputs, out, needs):
    a, b = inputs
    return (matmul(grad, transpose(b)) if needs[0] else None,
            matmul(transpose(a), grad) if needs[1] else None)


def transpose(x) -> Node:
    x = _node(x)
    if x.ndim != 2:
        raise ShapeError('transpose', x.shape)
    return _make('transpose', np.ascontiguousarray(x.value.T), (x,), _transpose_backward)


def _transpose_backward(grad, inputs, out, needs):
    return (transpose(grad),)


def reshape(x, shape) -> Node:
    x = _node(x)
    shape = tuple(shape)
    if int(np.prod(shape)) != x.size:
        raise ShapeError('reshape', x.shape, shape)
    return _make('reshape', x.value.reshape(shape).copy(), (x,), _reshape_backward)


def _reshape_backward(grad, inputs, out, needs):
    (x,) = inputs
    return (reshape(grad, x.shape),)


def dot(a, b) -> Node:
    """Inner product of two vectors of equal length."""
    a, b = _node(a), _node(b)
    if a.ndim != 1 or a.shape != b.shape:
        raise ShapeError('dot', a.shape, b.shape)
    return sum_all(mul(a, b))


def l2_norm(x) -> Node:
    return power(sum_all(mul(x, x)), 0.5)


# REDUCTIONS AND THEIR ADJOINTS

def sum_all(x) -> Node:
    """Sum of every component, as a scalar node."""
    x = _node(x)
    return _make('sum', np.array(np.sum(x.value)), (x,), _sum_backward)


def _sum_backward(grad, inputs, out, needs):
    (x,) = inputs
    return (expand(grad, x.shape),)


def expand(scalar, shape) -> Node:
    """Broadcast a scalar node to ``shape``."""
    scalar = _node(scalar)
    if scalar.ndim != 0:
        raise ShapeError('expand', scalar.shape, shape)
    return _make('expand', np.full(tuple(shape), float(scalar.value)), (scalar,), _expand_backward)


def _expand_backward(grad, inputs, out, needs):
    return (sum_all(grad),)


def mean(x) -> Node:
    x = _node(x)
    if x.size == 0:
        raise ShapeError('mean', x.shape)
    return mul(sum_all(x), constant(1.0 / x.size))


def sum_axis(x, axis: int) -> Node:
    """Reduce a matrix along ``axis`` (0: over rows, 1: over columns) to a vector."""
    x = _node(x)
    if x.ndim != 2 or axis not in (0, 1):
        raise ShapeError('sum_axis', x.shape)
    return _make('sum_axis', np.sum(x.value, axis=axis), (x,), _sum_axis_backward(axis))


def _sum_axis_backward(axis):
    def backward(grad, inputs, out, needs):
        (x,) = inputs
        return (broadcast_axis(grad, axis, x.shape[axis]),)
    return backward


def broadcast_axis(v, axis: int, size: int) -> Node:
    """
    Inverse of :func:`sum_axis`: repeat a vector ``size`` times along a new ``axis``.

    ``axis=0`` stacks copies as rows (``[size x m]``), ``axis=1`` as columns (``[m x size]``).
    """
    v = _node(v)
    if v.ndim != 1 or axis not in (0, 1):
        raise ShapeError('broadcast_axis', v.shape)
    if axis == 0:
        value = np.tile(v.value, (size, 1))
    else:
        value = np.tile(v.value[:, None], (1, size))
    return _make('broadcast_axis', value, (v,), _broadcast_axis_backward(axis))


def _broadcast_axis_backward(axis):
    def backward(grad, inputs, out, needs):
        return (sum_axis(grad, axis),)
    return backward


# VECTOR ELEMENT ACCESS

def index(v, i: int) -> Node:
    """Component ``i`` of a vector, as a scalar node."""
    v = _node(v)
    if v.ndim != 1 or not 0 <= i < v.shape[0]:
        raise ShapeError('index', v.shape, (i,))
    return _make('index', np.array(v.value[i]), (v,), _index_backward(i))


def _index_backward(i):
    def backward(grad, inputs, out, needs):
        (v,) = inputs
        return (scatter(grad, i, v.shape[0]),)
    return backward


def scatter(scalar, i: int, length: int) -> Node:
    """A length-``length`` vector that is zero except for ``scalar`` at position ``i``."""
    scalar = _node(scalar)
    if scalar.ndim != 0 or not 0 <= i < length:
        raise ShapeError('scatter', scalar.shape, (length,))
    value = np.zeros(length)
    value[i] = scalar.value
    return _make('scatter', value, (scalar,), _scatter_backward(i))


def _scatter_backward(i):
    def backward(grad, inputs, out, needs):
        return (index(grad, i),)
    return backward


def stack(scalars: Sequence) -> Node:
    """Collect scalar nodes into a vector."""
    scalars = tuple(_node(s) for s in scalars)
    if not scalars or any(s.ndim != 0 for s in scalars):
        raise ShapeError('stack', *(s.shape for s in scalars))
    value = np.array([s.value for s in scalars], dtype=np.float64)
    return _make('stack', value, scalars, _stack_backward)


def _stack_backward(grad, inputs, out, needs):
    return tuple(index(grad, i) if need else None for i, need in enumerate(needs))


# NONLINEARITIES

def relu(x) -> Node:
    x = _node(x)
    return _make('relu', np.maximum(x.value, 0.0), (x,), _relu_backward)


def _relu_backward(grad, inputs, out, needs):
    (x,) = inputs
    return (mul(grad, constant((x.value > 0.0).astype(np.float64))),)


def sigmoid(x) -> Node:
    x = _node(x)
    decay = np.exp(-np.abs(x.value))
    value = np.where(x.value >= 0, 1.0 / (1.0 + decay), decay / (1.0 + decay))
    return _make('sigmoid', value, (x,), _sigmoid_backward)


def _sigmoid_backward(grad, inputs, out, needs):
    # s' = s - s*s keeps the rule free of scalar offsets
    return (mul(grad, sub(out, mul(out, out))),)


def sin(x) -> Node:
    x = _node(x)
    return _make('sin', np.sin(x.value), (x,), _sin_backward)


def _sin_backward(grad, inputs, out, needs):
    (x,) = inputs
    return (mul(grad, cos(x)),)


def cos(x) -> Node:
    x = _node(x)
    return _make('cos', np.cos(x.value), (x,), _cos_backward)


def _cos_backward(grad, inputs, out, needs):
    (x,) = inputs
    return (neg(mul(grad, sin(x))),)


def exp(x) -> Node:
    x = _node(x)
    with np.errstate(over='ignore'):
        value = np.exp(x.value)
    return _make('exp', value, (x,), _exp_backward)


def _exp_backward(grad, inputs, out, needs):
    return (mul(grad, out),)


def absolute(x) -> Node:
    x = _node(x)
    return _make('abs', np.abs(x.value), (x,), _abs_backward)


def _abs_backward(grad, inputs, out, needs):
    (x,) = inputs
    return (mul(grad, constant(np.sign(x.value))),)


def arccos(x) -> Node:
    x = _node(x)
    with np.errstate(invalid='ignore'):
        value = np.arccos(x.value)
    return _make('arccos', value, (x,), _arccos_backward)


def _arccos_backward(grad, inputs, out, needs):
    (x,) = inputs
    return (neg(mul(grad, power(sub(_ones_like(x), mul(x, x)), -0.5))),)


def log_softmax(z) -> Node:
    """Row-wise log-softmax of a ``[n x c]`` matrix."""
    z = _node(z)
    if z.ndim != 2:
        raise ShapeError('log_softmax', z.shape)
    shifted = z.value - np.max(z.value, axis=1, keepdims=True)
    value = shifted - np.log(np.sum(np.exp(shifted), axis=1, keepdims=True))
    return _make('log_softmax', value, (z,), _log_softmax_backward)


def _log_softmax_backward(grad, inputs, out, needs):
    classes = out.shape[1]
    row_totals = broadcast_axis(sum_axis(grad, 1), 1, classes)
    return (sub(grad, mul(exp(out), row_totals)),)


# LOSSES

def mse(prediction, target) -> Node:
    """Mean squared error over every component."""
    prediction, target = _node(prediction), _node(target)
    if prediction.shape != target.shape:
        raise ShapeError('mse', prediction.shape, target.shape)
    residual = sub(prediction, target)
    return mean(mul(residual, residual))


def softmax_cross_entropy(logits, labels) -> Node:
    """
    Mean cross-entropy of integer ``labels`` under the softmax of ``logits``.

    :param logits: ``[n x c]`` node
    :param labels: length-``n`` integer array with values in ``0..c-1``
    """
    logits = _node(logits)
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeError('softmax_cross_entropy', logits.shape, labels.shape)
    one_hot = np.zeros(logits.shape)
    one_hot[np.arange(labels.shape[0]), labels] = 1.0
    picked = sum_all(mul(log_softmax(logits), constant(one_hot)))
    return mul(neg(picked), constant(1.0 / labels.shape[0]))


# DIFFERENTIATION

def _relevant_order(output: Node, targets: set):
    """
    Nodes between ``output`` and any target, output first (reverse topological order).

    Iterative post-order, so deep unrolled inner loops do not hit the recursion limit.
    """
    order, visited, relevant = [], set(), set()
    stack_ = [(output, False)]
    while stack_:
        node, expanded = stack_.pop()
        key = id(node)
        if expanded:
            if key in targets or any(id(p) in relevant for p in node.parents):
                relevant.add(key)
                order.append(node)
            continue
        if key in visited:
            continue
        visited.add(key)
        stack_.append((node, True))
        for parent in node.parents:
            if parent.requires_grad and id(parent) not in visited:
                stack_.append((parent, False))
    order.reverse()
    return order, relevant


def grad(output: Node, wrt: Sequence[Node], create_graph: bool = False) -> List[Node]:
    """
    Gradient of a scalar ``output`` with respect to each node in ``wrt``.

    Nodes in ``wrt`` that ``output`` does not depend on get a zero gradient.

    :param output: scalar node
    :param wrt: nodes to differentiate with respect to
    :param create_graph: return gradients that are themselves differentiable
    :return: one gradient node per entry of ``wrt``, with the same shape
    """
    if output.ndim != 0:
        raise GradientError(f'grad: output must be a scalar, got shape {output.shape}')
    wrt = list(wrt)
    grads = {}
    if output.requires_grad:
        targets = {id(w) for w in wrt}
        order, relevant = _relevant_order(output, targets)
        grads[id(output)] = constant(1.0)
        for node in order:
            upstream = grads.get(id(node))
            if upstream is None or node.backward is None:
                continue
            if create_graph:
                inputs, out = node.parents, node
            else:
                inputs, out = tuple(p.detach() for p in node.parents), node.detach()
            needs = tuple(p.requires_grad and id(p) in relevant for p in node.parents)
            contributions = node.backward(upstream, inputs, out, needs)
            for parent, contribution, need in zip(node.parents, contributions, needs):
                if not need or contribution is None:
                    continue
                key = id(parent)
                grads[key] = contribution if key not in grads else add(grads[key], contribution)

    result = []
    for w in wrt:
        g = grads.get(id(w))
        if g is None:
            g = constant(np.zeros(w.shape))
        elif not create_graph and g.requires_grad:
            g = g.detach()
        result.append(g)
    return result


def finite_difference_check(f: Callable[..., Node], point: Sequence, epsilon: float = 1e-5) -> float:
    """
    Compare :func:`grad` against central differences.

    :param f: function of one node per entry of ``point`` returning a scalar node
    :param point: arrays at which to compare
    :param epsilon: central-difference step
    :return: maximum relative error, with denominator ``max(|analytic|, |numeric|, 1e-8)``
    """
    if epsilon <= 0:
        raise GradientError('finite_difference_check: epsilon must be positive')
    arrays = [as_tensor(p) for p in point]
    variables = [variable(a) for a in arrays]
    analytic = [g.value for g in grad(f(*variables), variables)]

    def evaluate(values):
        try:
            result = float(f(*[variable(v) for v in values]).value)
        except NumericalError as e:
            raise GradientError(f'finite_difference_check: f is not finite near the point ({e})') from e
        if not np.isfinite(result):
            raise GradientError('finite_difference_check: f is not finite near the point')
        return result

    worst = 0.0
    for position, array in enumerate(arrays):
        for idx in np.ndindex(array.shape):
            shifted_up = [a.copy() for a in arrays]
            shifted_down = [a.copy() for a in arrays]
            shifted_up[position][idx] += epsilon
            shifted_down[position][idx] -= epsilon
            numeric = (evaluate(shifted_up) - evaluate(shifted_down)) / (2.0 * epsilon)
            exact = float(analytic[position][idx])
            denominator = max(abs(exact), abs(numeric), 1e-8)
            worst = max(worst, abs(exact - numeric) / denominator)
    return worst
