"""Dense float64 tensors with define-by-run reverse-mode differentiation.

Every differentiable operation produces a new :class:`Tensor` that remembers
its parents and a closure mapping the output gradient to parent gradients.
:func:`backward` orders that graph topologically (a :class:`Tape`) and walks
it once in reverse.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .exceptions import DimensionError, ValidationError

LOG_FLOOR = 1e-12


class Tensor:
    """n-dimensional float64 array with an optional gradient slot."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self._parents: tuple = ()
        self._backward: Optional[Callable] = None
        self.op = "leaf"

    @classmethod
    def _from_op(cls, data, parents: Sequence["Tensor"], backward_fn, op: str) -> "Tensor":
        out = cls.__new__(cls)
        out.data = data if data.dtype == np.float64 else data.astype(np.float64)
        out.grad = None
        out.op = op
        if any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward_fn
        else:
            out.requires_grad = False
            out._parents = ()
            out._backward = None
        return out

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return not self._parents

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag}, op={self.op!r})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return subtract(self, other)

    def __rsub__(self, other):
        return subtract(other, self)

    def __mul__(self, other):
        return multiply(self, other)

    def __rmul__(self, other):
        return multiply(other, self)

    def __truediv__(self, other):
        return divide(self, other)

    def __neg__(self):
        return multiply(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _broadcast_shape(kind: str, a: Tensor, b: Tensor) -> tuple:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{kind}: incompatible shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------------------
# elementwise binary ops


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("add", a, b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return Tensor._from_op(a.data + b.data, (a, b), backward, "add")


def subtract(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("subtract", a, b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return Tensor._from_op(a.data - b.data, (a, b), backward, "subtract")


def multiply(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("multiply", a, b)

    def backward(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return Tensor._from_op(a.data * b.data, (a, b), backward, "multiply")


def divide(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("divide", a, b)
    out = a.data / b.data

    def backward(g):
        ga = _unbroadcast(g / b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(-g * out / b.data, b.shape) if b.requires_grad else None
        return ga, gb

    return Tensor._from_op(out, (a, b), backward, "divide")


def matmul(a, b) -> Tensor:
    """``a @ b`` where ``b`` is 2-D and ``a`` has any rank >= 2."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim != 2 or a.shape[-1] != b.shape[0]:
        raise DimensionError(f"matmul: incompatible shapes {a.shape} and {b.shape}")

    def backward(g):
        ga = g @ b.data.T if a.requires_grad else None
        gb = None
        if b.requires_grad:
            gb = a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, b.shape[1])
        return ga, gb

    return Tensor._from_op(a.data @ b.data, (a, b), backward, "matmul")


# ---------------------------------------------------------------------------
# elementwise unary ops


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    # tanh form is overflow-free and exact at 0
    out = 0.5 * (1.0 + np.tanh(0.5 * x.data))

    def backward(g):
        return (g * out * (1.0 - out),)

    return Tensor._from_op(out, (x,), backward, "sigmoid")


def tanh(x) -> Tensor:
    x = as_tensor(x)
    out = np.tanh(x.data)

    def backward(g):
        return (g * (1.0 - out * out),)

    return Tensor._from_op(out, (x,), backward, "tanh")


def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0

    def backward(g):
        return (g * mask,)

    return Tensor._from_op(x.data * mask, (x,), backward, "relu")


def exp(x) -> Tensor:
    x = as_tensor(x)
    out = np.exp(x.data)

    def backward(g):
        return (g * out,)

    return Tensor._from_op(out, (x,), backward, "exp")


def log(x) -> Tensor:
    """Natural log with inputs clamped to ``LOG_FLOOR``."""
    x = as_tensor(x)
    clamped = np.maximum(x.data, LOG_FLOOR)

    def backward(g):
        return (np.where(x.data > LOG_FLOOR, g / clamped, 0.0),)

    return Tensor._from_op(np.log(clamped), (x,), backward, "log")


def sqrt(x) -> Tensor:
    x = as_tensor(x)
    out = np.sqrt(x.data)

    def backward(g):
        return (g * 0.5 / np.maximum(out, LOG_FLOOR),)

    return Tensor._from_op(out, (x,), backward, "sqrt")


# ---------------------------------------------------------------------------
# reductions and shape ops


def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def sum_(x, axis=None, keepdims=False) -> Tensor:
    x = as_tensor(x)
    axes = _norm_axes(axis, x.ndim)
    out = x.data.sum(axis=axes, keepdims=keepdims)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, x.shape).copy(),)

    return Tensor._from_op(np.asarray(out), (x,), backward, "sum")


def mean(x, axis=None, keepdims=False) -> Tensor:
    x = as_tensor(x)
    axes = _norm_axes(axis, x.ndim)
    count = int(np.prod([x.shape[a] for a in axes])) if axes else 1
    if count == 0:
        raise DimensionError(f"mean: empty reduction over axes {axes} of shape {x.shape}")
    out = x.data.mean(axis=axes, keepdims=keepdims)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / count, x.shape).copy(),)

    return Tensor._from_op(np.asarray(out), (x,), backward, "mean")


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise DimensionError(f"reshape: cannot reshape {x.shape} to {tuple(shape)}") from None

    def backward(g):
        return (g.reshape(x.shape),)

    return Tensor._from_op(out, (x,), backward, "reshape")


def transpose(x, axes=None) -> Tensor:
    x = as_tensor(x)
    axes = tuple(reversed(range(x.ndim))) if axes is None else tuple(axes)
    inverse = np.argsort(axes)

    def backward(g):
        return (g.transpose(inverse),)

    return Tensor._from_op(x.data.transpose(axes), (x,), backward, "transpose")


def getitem(x, index) -> Tensor:
    """Basic or advanced indexing; ``x[:, t]`` is the time-slice op."""
    x = as_tensor(x)
    try:
        out = x.data[index]
    except IndexError as exc:
        raise DimensionError(f"slice: {exc} for shape {x.shape}") from None

    def backward(g):
        full = np.zeros_like(x.data)
        np.add.at(full, index, g)
        return (full,)

    return Tensor._from_op(np.array(out), (x,), backward, "slice")


def concatenate(tensors: Sequence, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise DimensionError("concatenate: no inputs")
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        shapes = [t.shape for t in tensors]
        raise DimensionError(f"concatenate: incompatible shapes {shapes} on axis {axis}") from None
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return Tensor._from_op(out, tensors, backward, "concatenate")


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise DimensionError("stack: no inputs")
    shapes = {t.shape for t in tensors}
    if len(shapes) != 1:
        raise DimensionError(f"stack: incompatible shapes {sorted(shapes)}")
    out = np.stack([t.data for t in tensors], axis=axis)

    def backward(g):
        return tuple(np.moveaxis(g, axis, 0))

    return Tensor._from_op(out, tensors, backward, "stack")


# ---------------------------------------------------------------------------
# classification head


def softmax(logits, axis: int = -1) -> Tensor:
    """Row-wise softmax with max-subtraction."""
    logits = as_tensor(logits)
    if logits.size == 0 or logits.ndim == 0:
        raise DimensionError(f"softmax: empty or scalar input of shape {logits.shape}")
    shifted = logits.data - logits.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        return (out * (g - dot),)

    return Tensor._from_op(out, (logits,), backward, "softmax")


def categorical_cross_entropy(probs, labels) -> Tensor:
    """Mean over the batch of ``-log p[true class]``.

    ``labels`` must be one-hot rows; probabilities are clamped to
    ``[LOG_FLOOR, 1]`` before the log.
    """
    probs = as_tensor(probs)
    y = labels.data if isinstance(labels, Tensor) else np.asarray(labels, dtype=np.float64)
    if probs.ndim == 1:
        return categorical_cross_entropy(reshape(probs, (1, -1)), y.reshape(1, -1))
    if probs.ndim != 2 or y.shape != probs.shape:
        raise DimensionError(
            f"categorical_cross_entropy: probs {probs.shape} and labels {y.shape} must match (batch x classes)"
        )
    if not np.all(np.abs(probs.data.sum(axis=1) - 1.0) <= 1e-6):
        raise ValidationError("categorical_cross_entropy: probability rows must sum to 1")
    if not (np.all((y == 0.0) | (y == 1.0)) and np.all(y.sum(axis=1) == 1.0)):
        raise ValidationError("categorical_cross_entropy: labels must be one-hot rows")
    n = probs.shape[0]
    p_true = np.clip((probs.data * y).sum(axis=1), LOG_FLOOR, 1.0)
    loss = -np.log(p_true).mean()

    def backward(g):
        raw = (probs.data * y).sum(axis=1)
        scale = np.where(raw > LOG_FLOOR, -1.0 / (n * p_true), 0.0)
        return (g * y * scale[:, None],)

    return Tensor._from_op(np.asarray(loss), (probs,), backward, "cross_entropy")


_FORWARD_KINDS = {
    "add": add,
    "subtract": subtract,
    "multiply": multiply,
    "divide": divide,
    "matmul": matmul,
    "sigmoid": sigmoid,
    "tanh": tanh,
    "relu": relu,
    "exp": exp,
    "log": log,
    "sqrt": sqrt,
    "sum": sum_,
    "mean": mean,
    "concatenate": lambda *ts, axis=0: concatenate(ts, axis=axis),
    "stack": lambda *ts, axis=0: stack(ts, axis=axis),
    "reshape": reshape,
    "transpose": transpose,
    "slice": getitem,
    "softmax": softmax,
}


def forward_op(kind: str, *inputs, **kwargs) -> Tensor:
    """Dispatch an operation by name, e.g. ``forward_op("matmul", a, b)``."""
    try:
        fn = _FORWARD_KINDS[kind]
    except KeyError:
        raise ValueError(f"unknown op kind {kind!r}; expected one of {sorted(_FORWARD_KINDS)}") from None
    return fn(*inputs, **kwargs)


# ---------------------------------------------------------------------------
# reverse pass


@dataclass
class TapeEntry:
    node: Tensor
    parents: tuple
    op: str


@dataclass
class Tape:
    """Topologically ordered record of the subgraph that produced a tensor."""

    entries: list = field(default_factory=list)

    @classmethod
    def record(cls, output: Tensor) -> "Tape":
        order, seen = [], set()
        stack_ = [(output, False)]
        while stack_:
            node, expanded = stack_.pop()
            if expanded:
                order.append(TapeEntry(node, node._parents, node.op))
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack_.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack_.append((p, False))
        return cls(order)

    def __len__(self) -> int:
        return len(self.entries)

    def backward(self, loss: Tensor) -> None:
        grads = {id(loss): np.ones_like(loss.data)}
        for entry in reversed(self.entries):
            node = entry.node
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.is_leaf:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            parent_grads = node._backward(g)
            for parent, pg in zip(entry.parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg


def backward(loss: Tensor, tape: Optional[Tape] = None) -> None:
    """Accumulate ``d loss / d leaf`` into every leaf's ``grad``."""
    if loss.size != 1:
        raise DimensionError(f"backward: loss must be scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    (tape or Tape.record(loss)).backward(loss)
