# -*- coding: utf-8 -*-
"""
Dense float64 tensors with reverse-mode automatic differentiation.

Every operation on a :class:`Tensor` returns a new tensor; the inputs are never
modified. When at least one input requires a gradient, the result remembers its
parents and a backward rule. :func:`backward` orders these recorded operations
into a tape (every operation after all of its inputs) and replays it in
reverse, visiting each operation exactly once.

All arithmetic is done in 64-bit floats with numpy, whose reductions follow a
fixed order, so repeated forward passes on identical inputs are bit-identical.
"""
import contextlib

import numpy as np

from img2rna.exceptions import DimensionError

_GELU_C = np.sqrt(2.0 / np.pi)
_GELU_K = 0.044715

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Context manager that disables graph recording (evaluation passes)."""
    global _grad_enabled
    previous = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = previous


class Tensor:
    """
    n-dimensional float64 array that can take part in differentiation.

    Parameters
    ----------
    data : array-like
        Values, copied into a float64 array.
    requires_grad : bool
        Whether d(loss)/d(this tensor) should be accumulated into ``grad``.
    name : str, optional
        Name used in error messages (parameter tensors carry their name).
    """

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.name = name
        self.grad = None
        self._parents = ()
        self._backward = None
        self._op = None

    @classmethod
    def _wrap(cls, array):
        # Internal constructor that takes ownership of a freshly computed array
        out = cls.__new__(cls)
        out.data = array
        out.requires_grad = False
        out.name = None
        out.grad = None
        out._parents = ()
        out._backward = None
        out._op = None
        return out

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
        return self._backward is None

    def numpy(self):
        return self.data.copy()

    def item(self):
        if self.data.size != 1:
            raise DimensionError("item() needs a single-element tensor, got shape %s."
                                 % (self.shape,))
        return float(self.data.reshape(-1)[0])

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        label = " name=%s" % self.name if self.name else ""
        return "Tensor(shape=%s%s, requires_grad=%s)" % (self.shape, label, self.requires_grad)

    # Arithmetic
    # ----------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(as_tensor(other), self)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return mul(self, power(other, -1.0))
        return mul(self, 1.0 / float(other))

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return take(self, index)

    # Shape and reductions
    # --------------------
    def sum(self, axis=None, keepdims=False):
        return reduce_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return reduce_mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def swapaxes(self, axis1, axis2):
        return swapaxes(self, axis1, axis2)

    @property
    def T(self):
        return swapaxes(self, -1, -2)

    # Nonlinearities
    # --------------
    def relu(self):
        return relu(self)

    def gelu(self):
        return gelu(self)

    def softmax(self):
        return softmax_lastaxis(self)

    def backward(self):
        backward(self)


def as_tensor(value):
    """Return ``value`` as a Tensor (constants never require a gradient)."""
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


def apply_op(data, parents, backward_rule, op):
    """
    Create the output tensor of an operation.

    Parameters
    ----------
    data : numpy.ndarray
        Forward result (ownership is taken, the array must not be shared).
    parents : tuple of Tensor
        Operation inputs, in order.
    backward_rule : callable
        ``backward_rule(grad_out)`` returns one gradient array (or None) per parent.
    op : str
        Operation name, kept for debugging and tape inspection.
    """
    out = Tensor._wrap(data)
    out._op = op
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_rule
    return out


def _broadcast_shape(a, b, op):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(
            "Cannot broadcast shapes %s and %s in '%s'." % (a.shape, b.shape, op))


def _unbroadcast(grad, shape):
    """Sum ``grad`` back down to ``shape`` (reverse of numpy broadcasting)."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# Elementwise operations
# ======================

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "add")

    def rule(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return apply_op(a.data + b.data, (a, b), rule, "add")


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "sub")

    def rule(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return apply_op(a.data - b.data, (a, b), rule, "sub")


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "mul")

    def rule(g):
        grad_a = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        grad_b = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return grad_a, grad_b

    return apply_op(a.data * b.data, (a, b), rule, "mul")


def power(a, exponent):
    """Elementwise ``a ** exponent`` for a constant scalar exponent."""
    exponent = float(exponent)

    def rule(g):
        return (g * exponent * np.power(a.data, exponent - 1.0),)

    return apply_op(np.power(a.data, exponent), (a,), rule, "pow")


def relu(a):
    positive = a.data > 0

    def rule(g):
        return (g * positive,)

    return apply_op(np.where(positive, a.data, 0.0), (a,), rule, "relu")


def gelu(a):
    """GELU with the tanh approximation."""
    x = a.data
    t = np.tanh(_GELU_C * (x + _GELU_K * x ** 3))

    def rule(g):
        dt = (1.0 - t ** 2) * _GELU_C * (1.0 + 3.0 * _GELU_K * x ** 2)
        return (g * (0.5 * (1.0 + t) + 0.5 * x * dt),)

    return apply_op(0.5 * x * (1.0 + t), (a,), rule, "gelu")


_ELEMENTWISE = {"add": add, "sub": sub, "mul": mul, "relu": relu, "gelu": gelu}


def elementwise(op, *operands):
    """
    Apply a named pointwise operation.

    Parameters
    ----------
    op : str
        One of 'add', 'sub', 'mul' (binary) or 'relu', 'gelu' (unary).
    operands : Tensor or array-like
        Operands; binary operands must have equal shapes or broadcast.
    """
    if op not in _ELEMENTWISE:
        raise ValueError("Unknown elementwise operation '%s'." % op)
    return _ELEMENTWISE[op](*[as_tensor(x) for x in operands])


# Linear algebra
# ==============

def matmul(a, b):
    """
    Matrix product of the last two axes; leading axes broadcast.

    Raises
    ------
    DimensionError
        When either operand has fewer than 2 axes or the inner sizes differ.
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(
            "matmul shape mismatch: %s and %s." % (a.shape, b.shape))
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise DimensionError(
            "matmul batch shapes do not broadcast: %s and %s." % (a.shape, b.shape))

    def rule(g):
        grad_a = grad_b = None
        if a.requires_grad:
            grad_a = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)
        if b.requires_grad:
            grad_b = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)
        return grad_a, grad_b

    return apply_op(np.matmul(a.data, b.data), (a, b), rule, "matmul")


def softmax_lastaxis(a):
    """Softmax over the last axis, computed with max-subtraction."""
    if a.ndim == 0 or a.shape[-1] < 1:
        raise DimensionError("softmax needs a non-empty last axis, got shape %s." % (a.shape,))
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=-1, keepdims=True)

    def rule(g):
        return (s * (g - (g * s).sum(axis=-1, keepdims=True)),)

    return apply_op(s, (a,), rule, "softmax")


# Reductions and shape manipulation
# =================================

def _normalize_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def reduce_sum(a, axis=None, keepdims=False):
    axes = _normalize_axes(axis, a.ndim)

    def rule(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, a.shape).copy(),)

    return apply_op(np.asarray(a.data.sum(axis=axes, keepdims=keepdims)), (a,), rule, "sum")


def reduce_mean(a, axis=None, keepdims=False):
    axes = _normalize_axes(axis, a.ndim)
    count = 1
    for ax in axes:
        count *= a.shape[ax]
    return reduce_sum(a, axis=axes, keepdims=keepdims) * (1.0 / count)


def reshape(a, shape):
    try:
        data = a.data.reshape(shape)
    except ValueError:
        raise DimensionError("Cannot reshape %s into %s." % (a.shape, tuple(shape)))

    def rule(g):
        return (g.reshape(a.shape),)

    return apply_op(data.copy(), (a,), rule, "reshape")


def swapaxes(a, axis1, axis2):
    def rule(g):
        return (np.swapaxes(g, axis1, axis2),)

    return apply_op(np.ascontiguousarray(np.swapaxes(a.data, axis1, axis2)), (a,), rule,
                    "swapaxes")


def take(a, index):
    """Basic/advanced indexing ``a[index]``; gradients scatter back with add."""
    data = np.array(a.data[index], dtype=np.float64)

    def rule(g):
        grad = np.zeros_like(a.data)
        np.add.at(grad, index, g)
        return (grad,)

    return apply_op(data, (a,), rule, "getitem")


def stack(tensors, axis=0):
    """Stack equally shaped tensors along a new axis."""
    tensors = [as_tensor(t) for t in tensors]
    if len(tensors) == 0:
        raise DimensionError("Cannot stack an empty list of tensors.")
    shapes = set(t.shape for t in tensors)
    if len(shapes) != 1:
        raise DimensionError("Cannot stack tensors of shapes %s." % sorted(shapes))

    def rule(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(tensors)))

    return apply_op(np.stack([t.data for t in tensors], axis=axis), tuple(tensors), rule,
                    "stack")


# Backward pass
# =============

def build_tape(root):
    """
    Return the recorded operations that lead to ``root`` in topological order.

    Each entry is an output tensor of a recorded operation; its inputs
    (``_parents``) always appear before it.
    """
    tape = []
    visited = set()
    stack_ = [(root, False)]
    while stack_:
        node, expanded = stack_.pop()
        if expanded:
            tape.append(node)
            continue
        if id(node) in visited or node._backward is None:
            continue
        visited.add(id(node))
        stack_.append((node, True))
        for parent in reversed(node._parents):
            if parent._backward is not None and id(parent) not in visited:
                stack_.append((parent, False))
    return tape


def _accumulate_leaf(leaf, grad):
    if leaf.grad is None:
        leaf.grad = np.array(grad, dtype=np.float64)
    else:
        leaf.grad = leaf.grad + grad


def backward(loss):
    """
    Accumulate d(loss)/d(leaf) into ``grad`` of every leaf that requires it.

    Calling it again without resetting the leaves adds to the stored gradients.

    Raises
    ------
    DimensionError
        When ``loss`` is not a scalar.
    """
    if loss.size != 1:
        raise DimensionError("backward() needs a scalar loss, got shape %s." % (loss.shape,))
    seed = np.ones_like(loss.data)

    if loss._backward is None:
        if loss.requires_grad:
            _accumulate_leaf(loss, seed)
        return

    grads = {id(loss): seed}
    for node in reversed(build_tape(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        parent_grads = node._backward(g)
        for parent, pg in zip(node._parents, parent_grads):
            if pg is None or not parent.requires_grad:
                continue
            if parent._backward is None:
                _accumulate_leaf(parent, pg)
            else:
                previous = grads.get(id(parent))
                grads[id(parent)] = pg if previous is None else previous + pg


def numerical_gradient(fn, tensor, eps=1e-6):
    """
    Central finite-difference gradient of scalar ``fn()`` with respect to ``tensor``.

    ``tensor.data`` is perturbed in place one element at a time and restored.
    """
    grad = np.zeros_like(tensor.data)
    flat = tensor.data.reshape(-1)
    flat_grad = grad.reshape(-1)
    for i in range(flat.size):
        original = flat[i]
        flat[i] = original + eps
        plus = fn().item()
        flat[i] = original - eps
        minus = fn().item()
        flat[i] = original
        flat_grad[i] = (plus - minus) / (2.0 * eps)
    return grad
