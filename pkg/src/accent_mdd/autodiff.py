"""Minimal reverse-mode automatic differentiation over dense float64 arrays.

A :class:`Graph` is rebuilt for every forward pass.  Each call to
:meth:`Graph.apply` appends one node, so insertion order is a valid
topological order and :meth:`Graph.backward` is a single reversed sweep.

    g = Graph()
    x = g.leaf(Tensor([3.0]))
    loss = (x * x).sum()
    g.backward(loss)
    x.tensor.grad  # array([6.])
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np


class ShapeError(ValueError):
    pass


class Tensor:
    """Dense value array with an optional gradient slot."""

    __slots__ = ("data", "grad")

    def __init__(self, data, grad=None):
        self.data = np.array(data, dtype=np.float64)
        self.grad = grad

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape})"


@dataclass(eq=False)
class Node:
    graph: "Graph"
    id: int
    op: str
    inputs: tuple[int, ...]
    value: np.ndarray
    ctx: dict = field(default_factory=dict)
    tensor: Tensor | None = None  # set for parameter / input leaves
    requires_grad: bool = True

    @property
    def shape(self):
        return self.value.shape

    # sugar so layer code reads like maths
    def __add__(self, other):
        return self.graph.apply("add", [self, self.graph.lift(other)])

    def __radd__(self, other):
        return self.graph.apply("add", [self.graph.lift(other), self])

    def __sub__(self, other):
        return self.graph.apply("sub", [self, self.graph.lift(other)])

    def __rsub__(self, other):
        return self.graph.apply("sub", [self.graph.lift(other), self])

    def __mul__(self, other):
        if np.isscalar(other):
            return self.graph.apply("scale", [self], c=float(other))
        return self.graph.apply("mul", [self, self.graph.lift(other)])

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return self.graph.apply("scale", [self], c=-1.0)

    def __matmul__(self, other):
        return self.graph.apply("matmul", [self, self.graph.lift(other)])

    def __getitem__(self, key):
        return self.graph.apply("index", [self], key=key)

    def sum(self, axis=None):
        return self.graph.apply("sum", [self], axis=axis)

    def mean(self, axis):
        return self.graph.apply("mean", [self], axis=axis)

    def reshape(self, *shape):
        return self.graph.apply("reshape", [self], shape=shape)

    def transpose(self, *perm):
        return self.graph.apply("transpose", [self], perm=perm)

    def sigmoid(self):
        return self.graph.apply("sigmoid", [self])

    def tanh(self):
        return self.graph.apply("tanh", [self])

    def relu(self):
        return self.graph.apply("relu", [self])

    def softmax(self):
        return self.graph.apply("softmax", [self])

    def log_softmax(self):
        return self.graph.apply("log_softmax", [self])


# ---------------------------------------------------------------------------
# op table: name -> (forward(values, **attrs) -> (out, ctx), backward(g, values, out, ctx, **attrs) -> grads)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad


def _check_broadcast(op, a, b):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


def _fwd_add(vals):
    a, b = vals
    _check_broadcast("add", a, b)
    return a + b


def _bwd_add(g, vals, out, ctx):
    a, b = vals
    return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)


def _fwd_sub(vals):
    a, b = vals
    _check_broadcast("sub", a, b)
    return a - b


def _bwd_sub(g, vals, out, ctx):
    a, b = vals
    return _unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)


def _fwd_mul(vals):
    a, b = vals
    _check_broadcast("mul", a, b)
    return a * b


def _bwd_mul(g, vals, out, ctx):
    a, b = vals
    return _unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)


def _fwd_scale(vals, c):
    return vals[0] * c


def _bwd_scale(g, vals, out, ctx, c):
    return (g * c,)


def _fwd_matmul(vals):
    a, b = vals
    if a.ndim < 1 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner dimensions differ, {a.shape} @ {b.shape}")
    return np.matmul(a, b)


def _bwd_matmul(g, vals, out, ctx):
    a, b = vals
    if a.ndim == 1:
        ga = g @ np.swapaxes(b, -1, -2)
        gb = np.outer(a, g)
        return ga, gb
    ga = np.matmul(g, np.swapaxes(b, -1, -2))
    gb = np.matmul(np.swapaxes(a, -1, -2), g)
    return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)


def _fwd_concat(vals):
    ref = vals[0].shape[:-1]
    for v in vals[1:]:
        if v.shape[:-1] != ref:
            raise ShapeError(
                f"concat: leading shapes differ, {[v.shape for v in vals]}"
            )
    return np.concatenate(vals, axis=-1)


def _bwd_concat(g, vals, out, ctx):
    splits = np.cumsum([v.shape[-1] for v in vals])[:-1]
    return tuple(np.split(g, splits, axis=-1))


def _fwd_stack(vals, axis):
    if len({v.shape for v in vals}) != 1:
        raise ShapeError(f"stack: shapes differ, {[v.shape for v in vals]}")
    return np.stack(vals, axis=axis)


def _bwd_stack(g, vals, out, ctx, axis):
    return tuple(np.moveaxis(g, axis, 0))


def _fwd_broadcast(vals, shape):
    try:
        return np.broadcast_to(vals[0], shape).copy()
    except ValueError:
        raise ShapeError(f"broadcast_to: cannot broadcast {vals[0].shape} to {shape}") from None


def _bwd_broadcast(g, vals, out, ctx, shape):
    return (_unbroadcast(g, vals[0].shape),)


def _sigmoid(x):
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ez = np.exp(x[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _fwd_sigmoid(vals):
    return _sigmoid(vals[0])


def _bwd_sigmoid(g, vals, out, ctx):
    return (g * out * (1.0 - out),)


def _fwd_tanh(vals):
    return np.tanh(vals[0])


def _bwd_tanh(g, vals, out, ctx):
    return (g * (1.0 - out * out),)


def _fwd_relu(vals):
    return np.maximum(vals[0], 0.0)


def _bwd_relu(g, vals, out, ctx):
    # relu'(0) = 0
    return (g * (vals[0] > 0),)


def _fwd_exp(vals):
    return np.exp(vals[0])


def _bwd_exp(g, vals, out, ctx):
    return (g * out,)


def _fwd_log(vals):
    return np.log(vals[0])


def _bwd_log(g, vals, out, ctx):
    return (g / vals[0],)


def _fwd_softmax(vals):
    x = vals[0]
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def _bwd_softmax(g, vals, out, ctx):
    return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)


def _fwd_log_softmax(vals):
    x = vals[0]
    z = x - x.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def _bwd_log_softmax(g, vals, out, ctx):
    return (g - np.exp(out) * g.sum(axis=-1, keepdims=True),)


def _fwd_logsumexp(vals, axis):
    x = vals[0]
    m = x.max(axis=axis, keepdims=True)
    safe = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.exp(x - safe).sum(axis=axis, keepdims=True)) + safe
    return np.squeeze(out, axis=axis)


def _bwd_logsumexp(g, vals, out, ctx, axis):
    x = vals[0]
    o = np.expand_dims(out, axis)
    with np.errstate(invalid="ignore"):
        w = np.where(np.isfinite(o) & np.isfinite(x), np.exp(x - o), 0.0)
    return (w * np.expand_dims(g, axis),)


def _fwd_take(vals, idx, axis):
    x = vals[0]
    n = x.shape[axis]
    flat = np.asarray(idx)
    if flat.size and (flat.min() < -n or flat.max() >= n):
        raise IndexError(f"take: index out of range for axis of size {n}")
    return np.take(x, idx, axis=axis)


def _bwd_take(g, vals, out, ctx, idx, axis):
    x = vals[0]
    gx = np.zeros_like(x)
    idx = np.asarray(idx)
    gm = np.moveaxis(gx, axis, 0)
    gg = np.moveaxis(g, list(range(axis, axis + idx.ndim)), list(range(idx.ndim)))
    np.add.at(gm, idx, gg)
    return (gx,)


def _fwd_take_along(vals, idx, axis):
    return np.take_along_axis(vals[0], idx, axis=axis)


def _bwd_take_along(g, vals, out, ctx, idx, axis):
    x = vals[0]
    gx = np.zeros_like(x)
    grids = list(np.indices(idx.shape, sparse=True))
    grids[axis] = idx
    np.add.at(gx, tuple(grids), g)
    return (gx,)


def _fwd_index(vals, key):
    return vals[0][key]


def _bwd_index(g, vals, out, ctx, key):
    gx = np.zeros_like(vals[0])
    if _has_array(key):
        np.add.at(gx, key, g)
    else:
        gx[key] = g
    return (gx,)


def _has_array(key):
    keys = key if isinstance(key, tuple) else (key,)
    return any(isinstance(k, (list, np.ndarray)) for k in keys)


def _fwd_reshape(vals, shape):
    return vals[0].reshape(shape)


def _bwd_reshape(g, vals, out, ctx, shape):
    return (g.reshape(vals[0].shape),)


def _fwd_transpose(vals, perm):
    return np.transpose(vals[0], perm)


def _bwd_transpose(g, vals, out, ctx, perm):
    return (np.transpose(g, np.argsort(perm)),)


def _fwd_sum(vals, axis):
    return np.asarray(vals[0].sum(axis=axis))


def _bwd_sum(g, vals, out, ctx, axis):
    x = vals[0]
    if axis is None:
        return (np.broadcast_to(g, x.shape).copy(),)
    return (np.broadcast_to(np.expand_dims(g, axis), x.shape).copy(),)


def _fwd_mean(vals, axis):
    return vals[0].mean(axis=axis)


def _bwd_mean(g, vals, out, ctx, axis):
    x = vals[0]
    n = x.shape[axis]
    return (np.broadcast_to(np.expand_dims(g, axis), x.shape) / n,)


def _fwd_where(vals, mask):
    a, b = vals
    return np.where(mask, a, b)


def _bwd_where(g, vals, out, ctx, mask):
    a, b = vals
    return _unbroadcast(np.where(mask, g, 0.0), a.shape), _unbroadcast(np.where(mask, 0.0, g), b.shape)


def _fwd_layer_norm(vals, eps):
    x = vals[0]
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    return xc * inv


def _bwd_layer_norm(g, vals, out, ctx, eps):
    x = vals[0]
    xc = x - x.mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    gm = g.mean(axis=-1, keepdims=True)
    gy = (g * out).mean(axis=-1, keepdims=True)
    return (inv * (g - gm - out * gy),)


OPS: dict[str, tuple[Callable, Callable]] = {
    "add": (_fwd_add, _bwd_add),
    "sub": (_fwd_sub, _bwd_sub),
    "mul": (_fwd_mul, _bwd_mul),
    "scale": (_fwd_scale, _bwd_scale),
    "matmul": (_fwd_matmul, _bwd_matmul),
    "concat": (_fwd_concat, _bwd_concat),
    "stack": (_fwd_stack, _bwd_stack),
    "broadcast_to": (_fwd_broadcast, _bwd_broadcast),
    "sigmoid": (_fwd_sigmoid, _bwd_sigmoid),
    "tanh": (_fwd_tanh, _bwd_tanh),
    "relu": (_fwd_relu, _bwd_relu),
    "exp": (_fwd_exp, _bwd_exp),
    "log": (_fwd_log, _bwd_log),
    "softmax": (_fwd_softmax, _bwd_softmax),
    "log_softmax": (_fwd_log_softmax, _bwd_log_softmax),
    "logsumexp": (_fwd_logsumexp, _bwd_logsumexp),
    "take": (_fwd_take, _bwd_take),
    "take_along": (_fwd_take_along, _bwd_take_along),
    "index": (_fwd_index, _bwd_index),
    "reshape": (_fwd_reshape, _bwd_reshape),
    "transpose": (_fwd_transpose, _bwd_transpose),
    "sum": (_fwd_sum, _bwd_sum),
    "mean": (_fwd_mean, _bwd_mean),
    "where": (_fwd_where, _bwd_where),
    "layer_norm": (_fwd_layer_norm, _bwd_layer_norm),
}


def register_op(name: str, forward: Callable, backward: Callable) -> None:
    """Add a primitive.  ``forward(values, **attrs)`` returns the output array,
    ``backward(grad_out, values, out, ctx, **attrs)`` one gradient per input
    (``None`` for inputs that take no gradient).  A forward may return
    ``(out, ctx)``; ``ctx`` is handed back to the backward."""
    OPS[name] = (forward, backward)


class Graph:
    """Append-only list of nodes; insertion order is topological order."""

    def __init__(self):
        self.nodes: list[Node] = []
        self._leaf_of: dict[int, Node] = {}

    def __len__(self):
        return len(self.nodes)

    def _add(self, op, inputs, value, ctx, tensor=None, requires_grad=True):
        node = Node(self, len(self.nodes), op, tuple(inputs), value, ctx, tensor, requires_grad)
        self.nodes.append(node)
        return node

    def leaf(self, tensor: Tensor) -> Node:
        """Leaf bound to ``tensor``; repeated calls return the same node so
        fan-out gradients accumulate in one place."""
        key = id(tensor)
        node = self._leaf_of.get(key)
        if node is None:
            node = self._add("leaf", (), tensor.data, {}, tensor=tensor)
            self._leaf_of[key] = node
        return node

    def constant(self, value) -> Node:
        return self._add("const", (), np.asarray(value, dtype=np.float64), {}, requires_grad=False)

    def lift(self, x) -> Node:
        if isinstance(x, Node):
            return x
        if isinstance(x, Tensor):
            return self.leaf(x)
        return self.constant(x)

    def apply(self, op: str, inputs: Sequence[Node | int], **attrs: Any) -> Node:
        try:
            fwd, _ = OPS[op]
        except KeyError:
            raise ValueError(f"unknown op {op!r}") from None
        nodes = [self.nodes[i] if isinstance(i, (int, np.integer)) else i for i in inputs]
        for n in nodes:
            if n.graph is not self:
                raise ValueError(f"{op}: input node belongs to another graph")
        out = fwd([n.value for n in nodes], **attrs)
        ctx = {}
        if isinstance(out, tuple):
            out, ctx = out
        rg = any(n.requires_grad for n in nodes)
        node = self._add(op, [n.id for n in nodes], out, ctx, requires_grad=rg)
        node.ctx["attrs"] = attrs
        return node

    def backward(self, loss: Node | int) -> None:
        """Accumulate d(loss)/d(leaf) into every reachable leaf tensor's ``grad``."""
        loss = self.nodes[loss] if isinstance(loss, (int, np.integer)) else loss
        if loss.value.size != 1 or loss.value.ndim > 1:
            raise ShapeError(f"backward: loss must be scalar, got shape {loss.value.shape}")
        grads: list[np.ndarray | None] = [None] * (loss.id + 1)
        grads[loss.id] = np.ones_like(loss.value)
        for node in reversed(self.nodes[: loss.id + 1]):
            g = grads[node.id]
            if g is None or not node.requires_grad:
                continue
            if node.op == "leaf":
                t = node.tensor
                t.grad = g.copy() if t.grad is None else t.grad + g
                continue
            if node.op == "const":
                continue
            vals = [self.nodes[i].value for i in node.inputs]
            attrs = node.ctx["attrs"]
            in_grads = OPS[node.op][1](g, vals, node.value, node.ctx, **attrs)
            for i, gi in zip(node.inputs, in_grads):
                if gi is None or not self.nodes[i].requires_grad:
                    continue
                grads[i] = gi if grads[i] is None else grads[i] + gi


# ---------------------------------------------------------------------------
# module-level helpers mirroring the op kinds


def concat(xs: Sequence[Node]) -> Node:
    return xs[0].graph.apply("concat", list(xs))


def stack(xs: Sequence[Node], axis: int = 0) -> Node:
    return xs[0].graph.apply("stack", list(xs), axis=axis)


def take(x: Node, idx, axis: int = 0) -> Node:
    return x.graph.apply("take", [x], idx=np.asarray(idx, dtype=np.int64), axis=axis)


def take_along(x: Node, idx, axis: int) -> Node:
    return x.graph.apply("take_along", [x], idx=np.asarray(idx, dtype=np.int64), axis=axis)


def logsumexp(x: Node, axis: int = -1) -> Node:
    return x.graph.apply("logsumexp", [x], axis=axis)


def where(mask, a: Node, b: Node) -> Node:
    g = a.graph if isinstance(a, Node) else b.graph
    return g.apply("where", [g.lift(a), g.lift(b)], mask=np.asarray(mask, dtype=bool))


def broadcast_to(x: Node, shape) -> Node:
    return x.graph.apply("broadcast_to", [x], shape=tuple(shape))


def layer_norm(x: Node, eps: float = 1e-5) -> Node:
    return x.graph.apply("layer_norm", [x], eps=eps)


def exp(x: Node) -> Node:
    return x.graph.apply("exp", [x])


def log(x: Node) -> Node:
    return x.graph.apply("log", [x])


# ---------------------------------------------------------------------------


class GradCheckError(ValueError):
    pass


def grad_check(f: Callable[[np.ndarray], tuple[float, np.ndarray]], x, step: float = 1e-4) -> float:
    """Max over coordinates of |analytic - central FD| / max(1e-8, |analytic| + |FD|).

    ``f(x)`` must return ``(value, analytic_gradient)``.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    x = np.array(x, dtype=np.float64).ravel()
    v0, analytic = f(x.copy())
    analytic = np.asarray(analytic, dtype=np.float64).ravel()
    if not np.isfinite(v0):
        raise GradCheckError(f"f returned non-finite value {v0}")
    worst = 0.0
    for i in range(x.size):
        xp = x.copy()
        xp[i] += step
        xm = x.copy()
        xm[i] -= step
        fp, _ = f(xp)
        fm, _ = f(xm)
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise GradCheckError(f"f non-finite at coordinate {i}")
        fd = (fp - fm) / (2 * step)
        err = abs(analytic[i] - fd) / max(1e-8, abs(analytic[i]) + abs(fd))
        worst = max(worst, err)
    return worst
