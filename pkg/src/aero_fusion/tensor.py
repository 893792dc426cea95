"""
Dense float64 tensors with reverse-mode differentiation

Every operation records the tensors it was computed from together with a closure that maps the
gradient of its output onto gradients of its inputs. Calling :func:`backward` on a scalar walks
this graph in reverse topological order and hands every trainable leaf its gradient.

Only the operations the fusion network needs are provided: elementwise arithmetic on tensors of
identical shape (or with a python scalar), reductions, reshapes, axis permutations and batched
matrix products. The layer primitives built on top of them live in :mod:`aero_fusion.layers`.
"""
import logging

import numpy as np

logger = logging.getLogger(__name__)


class ShapeError(ValueError):
    """Raised when the shapes handed to an operation do not fit together"""


class NonFiniteError(ValueError):
    """Raised when a tensor holding NaN or Inf enters a primitive"""


class Tensor:
    """
    A node of the computation graph

    Parameters
    ----------
    data: array_like
        The values. Always stored as a contiguous float64 array
    requires_grad: bool
        If True, the tensor is a trainable leaf (or depends on one) and receives a gradient
    name: str or None
        Optional name, used for the parameters of the network and in diagnostics
    parents: tuple
        Tensors this tensor was computed from. Empty for leaves
    op: str
        Name of the operation that created the tensor
    """

    def __init__(self, data, requires_grad=False, name=None, parents=(), op="leaf"):
        self.data = np.asarray(data, dtype=np.float64, order="C")
        self.requires_grad = requires_grad
        self.name = name
        self.grad = None
        self.parents = tuple(parents)
        self.op = op
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def is_leaf(self):
        return not self.parents

    def numpy(self):
        """Return a copy of the values as a numpy array"""
        return self.data.copy()

    def item(self):
        return float(self.data.reshape(-1)[0])

    def zero_grad(self):
        self.grad = None

    def backward(self):
        """Back-propagate from this (scalar) tensor, see :func:`backward`"""
        return backward(self)

    def __repr__(self):
        label = f" name={self.name}" if self.name else ""
        return f"Tensor(shape={self.shape}, op={self.op}{label})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return scale(sub(self, other), -1.0)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise ShapeError("division is only supported by a python scalar")
        return scale(self, 1.0 / other)

    def __matmul__(self, other):
        return matmul(self, other)


def parameter(data, name=None):
    """Create a trainable leaf"""
    return Tensor(data, requires_grad=True, name=name)


def as_tensor(value):
    """Wrap *value* into a constant tensor unless it already is one"""
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


def make_node(data, parents, op, backward_fn):
    """
    Create the output tensor of an operation

    Parameters
    ----------
    data: np.ndarray
        Result of the forward computation
    parents: tuple of Tensor
        The inputs of the operation
    op: str
        Name of the operation
    backward_fn: callable
        Maps the gradient of the output to a tuple with one gradient (or None) per parent

    Returns
    -------
    Tensor:
        The new node. When no parent requires a gradient, the node is a plain constant and the
        graph is not extended
    """
    requires_grad = any(parent.requires_grad for parent in parents)
    if not requires_grad:
        return Tensor(data, op=op)
    out = Tensor(data, requires_grad=True, parents=parents, op=op)
    out._backward = backward_fn
    return out


def check_same_shape(op, first, second):
    if first.shape != second.shape:
        raise ShapeError(f"{op}: shape mismatch between {first.shape} and {second.shape}")


def check_finite(op, tensor):
    if not np.all(np.isfinite(tensor.data)):
        raise NonFiniteError(f"{op}: input of shape {tensor.shape} holds non-finite values")


def add(first, second):
    first = as_tensor(first)
    if not isinstance(second, Tensor):
        constant = float(second)
        return make_node(first.data + constant, (first,), "add_scalar", lambda grad: (grad,))
    check_same_shape("add", first, second)
    return make_node(first.data + second.data, (first, second), "add",
                     lambda grad: (grad, grad))


def sub(first, second):
    first = as_tensor(first)
    if not isinstance(second, Tensor):
        return add(first, -float(second))
    check_same_shape("sub", first, second)
    return make_node(first.data - second.data, (first, second), "sub",
                     lambda grad: (grad, -grad))


def mul(first, second):
    first = as_tensor(first)
    if not isinstance(second, Tensor):
        return scale(first, float(second))
    check_same_shape("mul", first, second)

    def _backward(grad):
        return grad * second.data, grad * first.data

    return make_node(first.data * second.data, (first, second), "mul", _backward)


def scale(tensor, factor):
    factor = float(factor)
    return make_node(tensor.data * factor, (tensor,), "scale", lambda grad: (grad * factor,))


def square(tensor):
    return make_node(tensor.data * tensor.data, (tensor,), "square",
                     lambda grad: (2.0 * tensor.data * grad,))


def sum_all(tensor):
    shape = tensor.shape
    return make_node(np.sum(tensor.data), (tensor,), "sum",
                     lambda grad: (np.full(shape, grad.item()),))


def mean_all(tensor):
    shape = tensor.shape
    count = tensor.size
    return make_node(np.mean(tensor.data), (tensor,), "mean",
                     lambda grad: (np.full(shape, grad.item() / count),))


def reshape(tensor, shape):
    shape = tuple(shape)
    if int(np.prod(shape)) != tensor.size:
        raise ShapeError(f"reshape: cannot reshape {tensor.shape} into {shape}")
    original = tensor.shape
    return make_node(tensor.data.reshape(shape), (tensor,), "reshape",
                     lambda grad: (grad.reshape(original),))


def transpose(tensor, axes):
    axes = tuple(axes)
    if sorted(axes) != list(range(tensor.ndim)):
        raise ShapeError(f"transpose: axes {axes} do not permute a tensor of shape "
                         f"{tensor.shape}")
    inverse = tuple(np.argsort(axes))
    return make_node(np.transpose(tensor.data, axes), (tensor,), "transpose",
                     lambda grad: (np.transpose(grad, inverse),))


def matmul(first, second):
    """
    Matrix product over the last two axes

    The leading axes of both operands must be identical, or *second* is a plain matrix which is
    then applied to every leading index of *first*
    """
    first = as_tensor(first)
    second = as_tensor(second)
    if first.ndim < 2 or second.ndim < 2:
        raise ShapeError(f"matmul: need at least 2 axes, got {first.shape} and {second.shape}")
    if first.shape[-1] != second.shape[-2]:
        raise ShapeError(f"matmul: inner extents differ in {first.shape} and {second.shape}")
    shared_matrix = second.ndim == 2
    if not shared_matrix and first.shape[:-2] != second.shape[:-2]:
        raise ShapeError(f"matmul: leading axes differ in {first.shape} and {second.shape}")

    def _backward(grad):
        grad_first = grad @ np.swapaxes(second.data, -1, -2)
        if shared_matrix:
            flat_first = first.data.reshape(-1, first.shape[-1])
            flat_grad = grad.reshape(-1, grad.shape[-1])
            grad_second = flat_first.T @ flat_grad
        else:
            grad_second = np.swapaxes(first.data, -1, -2) @ grad
        return grad_first, grad_second

    return make_node(first.data @ second.data, (first, second), "matmul", _backward)


def _topological_order(root):
    order = []
    visited = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node.parents:
            if id(parent) not in visited:
                stack.append((parent, False))
    return order


def backward(loss, params=None):
    """
    Reverse-mode differentiation of a scalar loss

    Parameters
    ----------
    loss: Tensor
        Scalar node (one element) at the end of the graph
    params: list of Tensor or None
        If given, the gradients are returned in this order, with all-zero arrays for parameters
        the loss does not depend on

    Returns
    -------
    dict or list:
        Without *params* a dict mapping every reachable trainable leaf to its gradient,
        otherwise a list aligned with *params*. The gradients are also stored on ``leaf.grad``
    """
    if loss.size != 1:
        raise ShapeError(f"backward: loss must be a scalar, got shape {loss.shape}")

    gradients = {id(loss): np.ones(loss.shape)}
    leaves = {}
    for node in reversed(_topological_order(loss)):
        grad = gradients.pop(id(node), None)
        if grad is None:
            continue
        if node.is_leaf:
            if node.requires_grad:
                leaves[id(node)] = (node, grad)
            continue
        parent_grads = node._backward(grad)
        for parent, parent_grad in zip(node.parents, parent_grads):
            if parent_grad is None or not parent.requires_grad:
                continue
            if parent_grad.shape != parent.shape:
                raise ShapeError(f"backward through {node.op}: gradient {parent_grad.shape} does "
                                 f"not match input {parent.shape}")
            key = id(parent)
            if key in gradients:
                gradients[key] = gradients[key] + parent_grad
            else:
                gradients[key] = parent_grad

    for leaf, grad in leaves.values():
        leaf.grad = grad

    if params is None:
        return {leaf: grad for leaf, grad in leaves.values()}

    result = list()
    for param in params:
        found = leaves.get(id(param))
        if found is None:
            param.grad = np.zeros(param.shape)
            result.append(param.grad)
        else:
            result.append(found[1])
    return result
