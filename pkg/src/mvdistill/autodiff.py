"""A small reverse-mode autodiff engine over float64 numpy arrays.

Only the operations the distillation models need are provided: dense
layers, ReLU, concatenation, softmax, cross-entropy, KL divergence and the
Gaussian reparameterization. Each op records its parents and a closure that
pushes the output gradient back to them.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

EPS = 1e-12


class GraphError(RuntimeError):
    pass


class Node:
    __slots__ = ("value", "grad", "parents", "backward_fn", "requires_grad", "name", "_backward_done")

    def __init__(self, value, parents: Sequence["Node"] = (), backward_fn: Callable | None = None,
                 requires_grad: bool = False, name: str | None = None):
        value = np.asarray(value, dtype=np.float64)
        if not np.all(np.isfinite(value)):
            raise FloatingPointError(f"non-finite values in {name or 'node'}")
        self.value = value
        self.grad: np.ndarray | None = None
        self.parents = tuple(parents)
        self.backward_fn = backward_fn
        self.requires_grad = requires_grad or any(p.requires_grad for p in self.parents)
        self.name = name
        self._backward_done = False

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Node({self.name or ''}, shape={self.shape})"

    def _accumulate(self, g: np.ndarray):
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        self.grad += g

    def zero_grad(self):
        self.grad = None

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__
    __radd__ = __add__


def parameter(value, name: str | None = None) -> Node:
    return Node(np.array(value, dtype=np.float64), requires_grad=True, name=name)


def constant(value, name: str | None = None) -> Node:
    return Node(value, name=name)


def _as_node(x) -> Node:
    return x if isinstance(x, Node) else constant(x)


def stop_gradient(x: Node) -> Node:
    """Same value, cut from the graph: nothing upstream sees its gradient."""
    return Node(x.value.copy(), name=f"sg({x.name})" if x.name else "stop_gradient")


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    # only row-wise bias broadcasting and scalars are supported
    if g.shape == shape:
        return g
    if len(shape) == 0:
        return np.asarray(g.sum())
    if len(shape) == 1 and g.ndim == 2 and g.shape[1] == shape[0]:
        return g.sum(axis=0)
    raise GraphError(f"cannot reduce gradient {g.shape} to {shape}")


def _check_broadcast(a: Node, b: Node):
    if a.shape == b.shape or b.value.ndim == 0 or a.value.ndim == 0:
        return
    if a.value.ndim == 2 and b.value.ndim == 1 and a.shape[1] == b.shape[0]:
        return
    if b.value.ndim == 2 and a.value.ndim == 1 and b.shape[1] == a.shape[0]:
        return
    raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")


def add(a, b) -> Node:
    a, b = _as_node(a), _as_node(b)
    _check_broadcast(a, b)

    def backward(g):
        a._accumulate(_unbroadcast(g, a.shape))
        b._accumulate(_unbroadcast(g, b.shape))

    return Node(a.value + b.value, (a, b), backward)


def sub(a, b) -> Node:
    a, b = _as_node(a), _as_node(b)
    _check_broadcast(a, b)

    def backward(g):
        a._accumulate(_unbroadcast(g, a.shape))
        b._accumulate(_unbroadcast(-g, b.shape))

    return Node(a.value - b.value, (a, b), backward)


def mul(a, b) -> Node:
    a, b = _as_node(a), _as_node(b)
    _check_broadcast(a, b)

    def backward(g):
        a._accumulate(_unbroadcast(g * b.value, a.shape))
        b._accumulate(_unbroadcast(g * a.value, b.shape))

    return Node(a.value * b.value, (a, b), backward)


def add_n(nodes: Sequence[Node]) -> Node:
    nodes = list(nodes)
    if not nodes:
        return constant(0.0)
    shape = nodes[0].shape
    if any(n.shape != shape for n in nodes):
        raise ValueError("add_n needs equal shapes")

    def backward(g):
        for n in nodes:
            n._accumulate(g)

    return Node(sum(n.value for n in nodes), nodes, backward)


def matmul(a: Node, b: Node) -> Node:
    if a.value.ndim != 2 or b.value.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul shape mismatch {a.shape} @ {b.shape}")

    def backward(g):
        a._accumulate(g @ b.value.T)
        b._accumulate(a.value.T @ g)

    return Node(a.value @ b.value, (a, b), backward)


def relu(x: Node) -> Node:
    mask = x.value > 0

    def backward(g):
        x._accumulate(g * mask)

    return Node(np.where(mask, x.value, 0.0), (x,), backward)


def exp(x: Node) -> Node:
    out = np.exp(x.value)

    def backward(g):
        x._accumulate(g * out)

    return Node(out, (x,), backward)


def concat(nodes: Sequence[Node], axis: int = 1) -> Node:
    nodes = list(nodes)
    sizes = [n.shape[axis] for n in nodes]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        for n, part in zip(nodes, np.split(g, splits, axis=axis)):
            n._accumulate(part)

    return Node(np.concatenate([n.value for n in nodes], axis=axis), nodes, backward)


def total(x: Node) -> Node:
    def backward(g):
        x._accumulate(np.broadcast_to(g, x.shape))

    return Node(x.value.sum(), (x,), backward)


def mean(x: Node) -> Node:
    size = x.value.size

    def backward(g):
        x._accumulate(np.broadcast_to(g / size, x.shape))

    return Node(x.value.mean(), (x,), backward)


def softmax(logits: Node, axis: int = -1) -> Node:
    z = logits.value - logits.value.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        logits._accumulate(out * (g - (g * out).sum(axis=axis, keepdims=True)))

    return Node(out, (logits,), backward)


def _check_rows(p: np.ndarray, what: str):
    if p.ndim != 2:
        raise ValueError(f"{what} must be a (batch, classes) matrix")
    if np.any(p < 0) or np.any(np.abs(p.sum(axis=1) - 1.0) > 1e-6):
        raise ValueError(f"{what} rows are not categorical distributions")


def kl_divergence(p: Node, q: Node) -> Node:
    """Batch mean of KL(p_row || q_row), floors both arguments of log at EPS.

    Zero entries of p contribute nothing; their gradient is the log ratio.
    """
    if p.shape != q.shape:
        raise ValueError(f"kl shapes differ: {p.shape} vs {q.shape}")
    _check_rows(p.value, "p")
    _check_rows(q.value, "q")
    n = p.shape[0]
    pf = np.maximum(p.value, EPS)
    qf = np.maximum(q.value, EPS)
    log_ratio = np.log(pf) - np.log(qf)
    value = (p.value * log_ratio).sum() / n

    def backward(g):
        if p.requires_grad:
            dp = log_ratio + (p.value > EPS)
            p._accumulate(g * dp / n)
        q._accumulate(g * np.where(q.value > EPS, -p.value / qf, 0.0) / n)

    return Node(value, (p, q), backward)


def cross_entropy(pred: Node, labels) -> Node:
    """Batch mean of -log pred[label] with the EPS floor."""
    labels = np.asarray(labels, dtype=np.int64)
    _check_rows(pred.value, "pred")
    n, k = pred.shape
    if labels.shape != (n,) or np.any(labels < 0) or np.any(labels >= k):
        raise ValueError("labels out of range")
    rows = np.arange(n)
    picked = pred.value[rows, labels]
    floored = np.maximum(picked, EPS)

    def backward(g):
        d = np.zeros_like(pred.value)
        d[rows, labels] = np.where(picked > EPS, -1.0 / floored, 0.0) / n
        pred._accumulate(g * d)

    return Node(-np.log(floored).mean(), (pred,), backward)


class Rng:
    """Seeded PCG64 stream. Same seed and call sequence give the same draws."""

    algorithm = "PCG64"

    def __init__(self, seed: int, stream: int = 0):
        self.seed = int(seed)
        self.stream = int(stream)
        self._gen = np.random.Generator(np.random.PCG64(np.random.SeedSequence([self.seed, self.stream])))

    def normal(self, shape) -> np.ndarray:
        return self._gen.standard_normal(shape)

    def uniform(self, shape=None):
        return self._gen.random(shape)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    @property
    def generator(self) -> np.random.Generator:
        return self._gen

    @property
    def state(self) -> dict:
        return self._gen.bit_generator.state

    @state.setter
    def state(self, value: dict):
        self._gen.bit_generator.state = value


def gaussian_reparameterize(mean: Node, log_var: Node, rng: Rng) -> Node:
    """z = mean + exp(log_var / 2) * xi with xi ~ N(0, I)."""
    if mean.shape != log_var.shape:
        raise ValueError(f"mean {mean.shape} and log_var {log_var.shape} differ")
    xi = rng.normal(mean.shape)
    std = np.exp(0.5 * log_var.value)

    def backward(g):
        mean._accumulate(g)
        log_var._accumulate(g * 0.5 * std * xi)

    return Node(mean.value + std * xi, (mean, log_var), backward)


def _topological(root: Node) -> list[Node]:
    order, seen = [], set()
    stack = [(root, False)]
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
            if id(p) not in seen and p.requires_grad:
                stack.append((p, False))
    return order


def backward(loss: Node) -> list[Node]:
    """Populate ``.grad`` on every node reachable from a scalar loss.

    Returns the visited nodes in topological order. Calling it twice on the
    same loss without :func:`reset` is an error.
    """
    if loss.value.ndim != 0 and loss.value.size != 1:
        raise GraphError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss._backward_done:
        raise GraphError("backward already ran on this graph; call reset() first")
    order = _topological(loss)
    for node in order:
        if node.requires_grad and node.grad is None:
            node.grad = np.zeros_like(node.value)
    loss.grad = np.ones_like(loss.value)
    for node in reversed(order):
        if node.backward_fn is not None and node.requires_grad:
            node.backward_fn(node.grad)
    loss._backward_done = True
    return order


def reset(loss: Node):
    """Clear gradients on the graph under ``loss`` so backward can run again."""
    for node in _topological(loss):
        node.grad = None
    loss._backward_done = False
