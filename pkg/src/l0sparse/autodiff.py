"""Minimal define-by-run reverse-mode differentiation over float64 numpy arrays.

Only the primitives the gated-network objective needs are provided. Every
primitive validates input shapes, refuses to produce non-finite values and
records an exact vector-Jacobian product for the backward sweep.
"""

from __future__ import annotations

from typing import Callable, Iterable, Optional, Sequence

import numpy as np

__all__ = [
    "Node",
    "ShapeError",
    "NumericError",
    "as_node",
    "constant",
    "parameter",
    "matmul",
    "add",
    "sub",
    "mul",
    "neg",
    "scale",
    "sum",
    "mean",
    "sigmoid",
    "log",
    "exp",
    "hard_sigmoid",
    "relu",
    "softmax_cross_entropy",
    "squared_error",
    "backward",
]


class ShapeError(ValueError):
    """Raised when the inputs of a primitive have incompatible shapes."""

    def __init__(self, op: str, *shapes: Sequence[int], detail: str = ""):
        self.op = op
        self.shapes = tuple(tuple(s) for s in shapes)
        msg = f"{op}: incompatible shapes {', '.join(str(s) for s in self.shapes)}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class NumericError(ArithmeticError):
    """Raised when a primitive would produce NaN or Inf."""

    def __init__(self, op: str, detail: str = "non-finite output"):
        self.op = op
        super().__init__(f"{op}: {detail}")


class Node:
    """A value in the computation graph.

    ``value`` is a float64 array. ``grad`` is allocated lazily by
    :func:`backward` and only ever for nodes with ``requires_grad``.
    """

    __slots__ = ("value", "grad", "requires_grad", "op", "parents", "_vjp", "name")

    def __init__(
        self,
        value,
        requires_grad: bool = False,
        op: str = "leaf",
        parents: tuple["Node", ...] = (),
        vjp: Optional[Callable[[np.ndarray], tuple[Optional[np.ndarray], ...]]] = None,
        name: Optional[str] = None,
    ):
        arr = np.asarray(value, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise NumericError(op)
        self.value = arr
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.op = op
        self.parents = parents
        self._vjp = vjp
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def zero_grad(self) -> None:
        self.grad = None

    def item(self) -> float:
        return float(self.value)

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"Node{label}(op={self.op}, shape={self.shape}, requires_grad={self.requires_grad})"

    # operator sugar; everything routes through the primitives below
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, float(other))
        return mul(self, other)

    def __rmul__(self, other):
        if np.isscalar(other):
            return scale(self, float(other))
        return mul(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def as_node(x) -> Node:
    return x if isinstance(x, Node) else Node(x)


def constant(x) -> Node:
    return Node(x, requires_grad=False)


def parameter(x, name: Optional[str] = None) -> Node:
    return Node(np.array(x, dtype=np.float64), requires_grad=True, name=name)


def _make(op: str, value: np.ndarray, parents: tuple[Node, ...], vjp) -> Node:
    if not np.all(np.isfinite(value)):
        raise NumericError(op)
    needs = any(p.requires_grad for p in parents)
    return Node(value, requires_grad=needs, op=op, parents=parents, vjp=vjp if needs else None)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` following numpy broadcasting rules."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shape(op: str, a: Node, b: Node) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(op, a.shape, b.shape) from None


# ---------------------------------------------------------------------------
# primitives


def matmul(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    if a.value.ndim != 2 or b.value.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError("matmul", a.shape, b.shape, detail="expected [m,k] @ [k,n]")
    av, bv = a.value, b.value

    def vjp(g):
        return g @ bv.T, av.T @ g

    return _make("matmul", av @ bv, (a, b), vjp)


def add(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    _broadcast_shape("add", a, b)
    sa, sb = a.shape, b.shape

    def vjp(g):
        return _unbroadcast(g, sa), _unbroadcast(g, sb)

    return _make("add", a.value + b.value, (a, b), vjp)


def sub(a, b) -> Node:
    return add(a, neg(b))


def mul(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    _broadcast_shape("mul", a, b)
    av, bv = a.value, b.value

    def vjp(g):
        return _unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)

    return _make("mul", av * bv, (a, b), vjp)


def neg(a) -> Node:
    a = as_node(a)
    return _make("neg", -a.value, (a,), lambda g: (-g,))


def scale(a, c: float) -> Node:
    a = as_node(a)
    c = float(c)
    return _make("scale", c * a.value, (a,), lambda g: (c * g,))


def sum(a, axis: Optional[int] = None) -> Node:  # noqa: A001 - mirrors numpy
    a = as_node(a)
    shape = a.shape
    if axis is not None and not -len(shape) <= axis < len(shape):
        raise ShapeError("sum", shape, detail=f"axis {axis} out of range")

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

    return _make("sum", np.sum(a.value, axis=axis), (a,), vjp)


def mean(a) -> Node:
    a = as_node(a)
    if a.value.size == 0:
        raise ShapeError("mean", a.shape, detail="empty input")
    n = a.value.size
    shape = a.shape
    return _make("mean", np.mean(a.value), (a,), lambda g: (np.full(shape, g / n),))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # split by sign so that exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a) -> Node:
    a = as_node(a)
    s = _sigmoid(np.atleast_1d(a.value)).reshape(a.shape)
    return _make("sigmoid", s, (a,), lambda g: (g * s * (1.0 - s),))


def log(a) -> Node:
    a = as_node(a)
    av = a.value
    if np.any(av <= 0):
        raise NumericError("log", "argument must be strictly positive")
    return _make("log", np.log(av), (a,), lambda g: (g / av,))


def exp(a) -> Node:
    a = as_node(a)
    with np.errstate(over="ignore"):
        e = np.exp(a.value)
    return _make("exp", e, (a,), lambda g: (g * e,))


def hard_sigmoid(a) -> Node:
    """``min(1, max(0, x))``; subgradient 1 strictly inside (0, 1), else 0."""
    a = as_node(a)
    av = a.value
    inside = ((av > 0.0) & (av < 1.0)).astype(np.float64)
    return _make("hard_sigmoid", np.clip(av, 0.0, 1.0), (a,), lambda g: (g * inside,))


def relu(a) -> Node:
    a = as_node(a)
    av = a.value
    active = (av > 0.0).astype(np.float64)
    return _make("relu", av * active, (a,), lambda g: (g * active,))


def softmax_cross_entropy(logits, labels) -> Node:
    """Mean negative log-likelihood of integer ``labels`` under softmax(logits)."""
    logits = as_node(logits)
    labels = np.asarray(labels)
    if logits.value.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeError("softmax_cross_entropy", logits.shape, labels.shape)
    if labels.size == 0:
        raise ShapeError("softmax_cross_entropy", logits.shape, labels.shape, detail="empty batch")
    if not np.issubdtype(labels.dtype, np.integer):
        raise TypeError("softmax_cross_entropy: labels must be integers")
    n, k = logits.shape
    if labels.min() < 0 or labels.max() >= k:
        raise ValueError(f"softmax_cross_entropy: labels must lie in [0, {k})")
    z = logits.value
    shifted = z - z.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(n)
    loss = np.mean(lse - shifted[rows, labels])

    def vjp(g):
        p = np.exp(shifted - lse[:, None])
        p[rows, labels] -= 1.0
        return (g * p / n,)

    return _make("softmax_cross_entropy", np.asarray(loss), (logits,), vjp)


def squared_error(pred, target) -> Node:
    """Mean over all entries of ``(pred - target)**2``."""
    pred = as_node(pred)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeError("squared_error", pred.shape, target.shape)
    diff = pred.value - target
    n = diff.size
    return _make("squared_error", np.asarray(np.mean(diff * diff)), (pred,), lambda g: (2.0 * g * diff / n,))


# ---------------------------------------------------------------------------
# backward sweep


def _topological(root: Node) -> list[Node]:
    order: list[Node] = []
    seen: set[int] = set()
    stack: list[tuple[Node, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Node) -> None:
    """Accumulate d(loss)/d(node) into ``.grad`` of every requires_grad ancestor."""
    if loss.value.size != 1:
        raise ShapeError("backward", loss.shape, detail="loss must be scalar")
    if not loss.requires_grad:
        return
    pending: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.value)}
    for node in reversed(_topological(loss)):
        g = pending.pop(id(node), None)
        if g is None:
            continue
        node.grad = g if node.grad is None else node.grad + g
        if not node.parents:
            continue
        for parent, pg in zip(node.parents, node._vjp(g)):
            if not parent.requires_grad or pg is None:
                continue
            key = id(parent)
            pending[key] = pg if key not in pending else pending[key] + pg


def zero_grad(params: Iterable[Node]) -> None:
    for p in params:
        p.grad = None
