"""Small reverse-mode automatic differentiation engine over float64 arrays.

The graph is rebuilt on every forward pass (a dynamic tape), which suits
trajectories of varying length.  Every operation returns a :class:`Node`
whose ``value`` is a numpy array; nodes that depend on a trainable leaf
carry a closure mapping the upstream gradient to gradients for their
parents.

Example
-------
>>> store = ParamStore(seed=0)
>>> w = store.param("w", (2,), init="zeros")
>>> loss = sum_(w * w)
>>> grads = backward(loss, store)
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ConfigurationError, DomainError, UsageError

LOG_Z = "log_z"
LEAKY_SLOPE = 0.01


class Node:
    """A value in the differentiation graph."""

    __slots__ = ("value", "parents", "op", "grad", "requires_grad", "_backward", "name")
    __array_ufunc__ = None  # make numpy defer to the reflected operators below

    def __init__(self, value, parents=(), op="const", backward=None, requires_grad=False, name=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.parents = tuple(parents)
        self.op = op
        self.requires_grad = requires_grad
        self._backward = backward
        self.grad = None
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Node(op={self.op}, shape={self.value.shape})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def as_node(x) -> Node:
    return x if isinstance(x, Node) else Node(x)


def _make(value, parents, op, backward) -> Node:
    parents = tuple(parents)
    if any(p.requires_grad for p in parents):
        return Node(value, parents, op, backward, requires_grad=True)
    return Node(value, op=op)


def _unbroadcast(grad, shape):
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shape(a, b, op):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError as exc:
        raise ConfigurationError(f"{op}: shapes {a.shape} and {b.shape} do not conform") from exc


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    _broadcast_shape(a, b, "add")

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(a.value + b.value, (a, b), "add", bw)


def sub(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    _broadcast_shape(a, b, "sub")

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make(a.value - b.value, (a, b), "sub", bw)


def mul(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    _broadcast_shape(a, b, "mul")

    def bw(g):
        return _unbroadcast(g * b.value, a.shape), _unbroadcast(g * a.value, b.shape)

    return _make(a.value * b.value, (a, b), "mul", bw)


def div(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    _broadcast_shape(a, b, "div")
    out = a.value / b.value

    def bw(g):
        return _unbroadcast(g / b.value, a.shape), _unbroadcast(-g * out / b.value, b.shape)

    return _make(out, (a, b), "div", bw)


def neg(a) -> Node:
    a = as_node(a)
    return _make(-a.value, (a,), "neg", lambda g: (-g,))


def power(a, p: float) -> Node:
    a = as_node(a)
    out = a.value**p

    def bw(g):
        return (g * p * a.value ** (p - 1),)

    return _make(out, (a,), "power", bw)


def exp(a) -> Node:
    a = as_node(a)
    out = np.exp(a.value)
    return _make(out, (a,), "exp", lambda g: (g * out,))


def log(a) -> Node:
    a = as_node(a)
    if np.any(a.value <= 0):
        raise DomainError("log of a non-positive value")
    return _make(np.log(a.value), (a,), "log", lambda g: (g / a.value,))


def leaky_relu(a, slope: float = LEAKY_SLOPE) -> Node:
    a = as_node(a)
    scale = np.where(a.value > 0, 1.0, slope)
    return _make(a.value * scale, (a,), "leaky_relu", lambda g: (g * scale,))


def stop_gradient(a) -> Node:
    """Pass the value through; contribute nothing to the parents' gradients."""
    return Node(as_node(a).value.copy(), op="stop_gradient")


# ---------------------------------------------------------------------------
# linear algebra, reductions, indexing


def matmul(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    if a.value.ndim != 2 or b.value.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ConfigurationError(f"matmul: shapes {a.shape} and {b.shape} do not conform")

    def bw(g):
        ga = g @ b.value.T if a.requires_grad else None
        gb = a.value.T @ g if b.requires_grad else None
        return ga, gb

    return _make(a.value @ b.value, (a, b), "matmul", bw)


def sum_(a, axis=None) -> Node:
    a = as_node(a)
    out = a.value.sum(axis=axis)

    def bw(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), a.shape).copy(),)

    return _make(out, (a,), "sum", bw)


def mean(a, axis=None) -> Node:
    a = as_node(a)
    count = a.value.size if axis is None else a.shape[axis]
    return mul(sum_(a, axis), 1.0 / count)


def logsumexp(a) -> Node:
    """Log-sum-exp over the last axis; rows made entirely of -inf give -inf."""
    a = as_node(a)
    m = a.value.max(axis=-1, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.exp(a.value - m).sum(axis=-1)) + m[..., 0]

    def bw(g):
        with np.errstate(invalid="ignore"):
            soft = np.exp(a.value - out[..., None])
        soft = np.nan_to_num(soft, nan=0.0)
        return (g[..., None] * soft,)

    return _make(out, (a,), "logsumexp", bw)


def log_softmax(a) -> Node:
    a = as_node(a)
    return sub(a, reshape(logsumexp(a), a.shape[:-1] + (1,)))


def reshape(a, shape) -> Node:
    a = as_node(a)
    return _make(a.value.reshape(shape), (a,), "reshape", lambda g: (g.reshape(a.shape),))


def concat(nodes: Sequence, axis: int = -1) -> Node:
    nodes = [as_node(n) for n in nodes]
    try:
        out = np.concatenate([n.value for n in nodes], axis=axis)
    except ValueError as exc:
        raise ConfigurationError(f"concat: {exc}") from exc
    sizes = [n.shape[axis] for n in nodes]
    cuts = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, cuts, axis=axis))

    return _make(out, nodes, "concat", bw)


def gather(a, index) -> Node:
    """Pick ``a[i, index[i]]`` for each row ``i`` of a 2-D node."""
    a = as_node(a)
    index = np.asarray(index, dtype=np.int64)
    if a.value.ndim != 2 or index.shape != (a.shape[0],):
        raise ConfigurationError(f"gather: node {a.shape} with index {index.shape}")
    rows = np.arange(a.shape[0])

    def bw(g):
        full = np.zeros(a.shape)
        full[rows, index] = g
        return (full,)

    return _make(a.value[rows, index], (a,), "gather", bw)


def take(a, index) -> Node:
    """Select rows (axis 0) by index; repeated indices accumulate in backward."""
    a = as_node(a)
    index = np.asarray(index, dtype=np.int64)

    def bw(g):
        full = np.zeros(a.shape)
        np.add.at(full, index, g)
        return (full,)

    return _make(a.value[index], (a,), "take", bw)


def scatter(a, index, size: int) -> Node:
    """Place a length-b vector into positions ``index`` of a zero vector of ``size``."""
    a = as_node(a)
    index = np.asarray(index, dtype=np.int64)
    out = np.zeros(size)
    out[index] = a.value

    def bw(g):
        return (g[index],)

    return _make(out, (a,), "scatter", bw)


def columns(a, start: int, stop: int) -> Node:
    """``a[..., start:stop]``."""
    a = as_node(a)

    def bw(g):
        full = np.zeros(a.shape)
        full[..., start:stop] = g
        return (full,)

    return _make(a.value[..., start:stop], (a,), "columns", bw)


def matmul_const(A, b) -> Node:
    """``A @ b`` for a constant matrix ``A`` (dense or scipy.sparse)."""
    b = as_node(b)
    if A.shape[1] != b.shape[0]:
        raise ConfigurationError(f"matmul_const: shapes {A.shape} and {b.shape} do not conform")
    return _make(np.asarray(A @ b.value), (b,), "matmul_const", lambda g: (np.asarray(A.T @ g),))


def dot(a, b) -> Node:
    return sum_(mul(a, b))


# ---------------------------------------------------------------------------
# parameters and the backward pass


def glorot_uniform(rng: np.random.Generator, shape) -> np.ndarray:
    fan_in, fan_out = shape[0], shape[-1]
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


class ParamStore:
    """Named parameter blocks plus the scalar ``log_z``.

    Blocks are created lazily the first time a network asks for them, so
    construction order is the initialisation order and a fixed seed gives
    fixed parameters.
    """

    def __init__(self, seed: int = 0):
        self.rng = np.random.default_rng(seed)
        self.blocks: dict[str, Node] = {}
        self.blocks[LOG_Z] = Node(np.zeros(()), op="param", requires_grad=True, name=LOG_Z)

    @property
    def log_z(self) -> Node:
        return self.blocks[LOG_Z]

    def param(self, name: str, shape, init="glorot") -> Node:
        node = self.blocks.get(name)
        if node is not None:
            if node.shape != tuple(shape):
                raise ConfigurationError(f"parameter {name!r} exists with shape {node.shape}, asked {shape}")
            return node
        if callable(init):
            value = init(self.rng, shape)
        elif init == "glorot":
            value = glorot_uniform(self.rng, shape)
        elif init == "zeros":
            value = np.zeros(shape)
        else:
            raise ConfigurationError(f"unknown initialiser {init!r}")
        node = Node(value, op="param", requires_grad=True, name=name)
        self.blocks[name] = node
        return node

    def __contains__(self, name):
        return name in self.blocks

    def __len__(self):
        return len(self.blocks)

    def names(self, include_log_z: bool = True) -> list[str]:
        return [n for n in self.blocks if include_log_z or n != LOG_Z]

    def values(self) -> dict[str, np.ndarray]:
        return {n: b.value.copy() for n, b in self.blocks.items()}

    def load(self, values: dict[str, np.ndarray]) -> None:
        for name, value in values.items():
            value = np.asarray(value, dtype=np.float64)
            if name in self.blocks:
                self.blocks[name].value = value.copy()
            else:
                self.blocks[name] = Node(value.copy(), op="param", requires_grad=True, name=name)

    def zero_like(self) -> dict[str, np.ndarray]:
        return {n: np.zeros_like(b.value) for n, b in self.blocks.items()}

    def flatten(self, grads: dict[str, np.ndarray], include_log_z: bool = False) -> np.ndarray:
        names = self.names(include_log_z)
        if not names:
            return np.zeros(0)
        return np.concatenate([np.ravel(grads[n]) for n in names])

    def unflatten(self, vec: np.ndarray, include_log_z: bool = False) -> dict[str, np.ndarray]:
        out, pos = {}, 0
        for n in self.names(include_log_z):
            size = self.blocks[n].value.size
            out[n] = vec[pos : pos + size].reshape(self.blocks[n].shape)
            pos += size
        if not include_log_z:
            out[LOG_Z] = np.zeros(())
        return out

    def n_params(self, include_log_z: bool = False) -> int:
        return sum(self.blocks[n].value.size for n in self.names(include_log_z))


def _toposort(root: Node) -> list[Node]:
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
        for parent in node.parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


def grad(root: Node, wrt: Iterable[Node]) -> list[np.ndarray]:
    """Gradients of a scalar ``root`` with respect to the nodes in ``wrt``."""
    if root.value.size != 1:
        raise UsageError(f"backward needs a scalar root, got shape {root.shape}")
    wrt = list(wrt)
    acc: dict[int, np.ndarray] = {}
    if root.requires_grad:
        acc[id(root)] = np.ones_like(root.value)
        for node in reversed(_toposort(root)):
            g = acc.get(id(node))
            if g is None or node._backward is None:
                continue
            del acc[id(node)]
            for parent, pg in zip(node.parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in acc:
                    acc[key] = acc[key] + pg
                else:
                    acc[key] = pg
    return [acc.get(id(n), np.zeros_like(n.value)).reshape(n.shape) for n in wrt]


def backward(root: Node, store: ParamStore) -> dict[str, np.ndarray]:
    """Gradient of ``root`` for every block in ``store``; resets ``.grad`` each call."""
    names = list(store.blocks)
    grads = grad(root, [store.blocks[n] for n in names])
    out = {}
    for name, g in zip(names, grads):
        store.blocks[name].grad = g
        out[name] = g
    return out


def finite_diff_check(
    fn: Callable[[ParamStore], Node],
    store: ParamStore,
    step: float = 1e-5,
    n_coords: int | None = None,
    rng: np.random.Generator | None = None,
) -> float:
    """Max relative error between autodiff and central differences.

    The error for one coordinate is ``|analytic - numeric| / (|numeric| + 1e-8)``.
    With ``n_coords`` set, only that many coordinates (drawn with ``rng``) are
    probed; otherwise every coordinate of every block is.
    """
    fn(store)  # materialise lazily created blocks
    analytic = backward(fn(store), store)
    coords = [(name, i) for name in store.blocks for i in range(store.blocks[name].value.size)]
    if n_coords is not None and n_coords < len(coords):
        rng = rng or np.random.default_rng(0)
        pick = rng.choice(len(coords), size=n_coords, replace=False)
        coords = [coords[k] for k in sorted(pick)]
    worst = 0.0
    for name, i in coords:
        flat = store.blocks[name].value.reshape(-1)
        keep = flat[i]
        flat[i] = keep + step
        up = float(fn(store).value)
        flat[i] = keep - step
        down = float(fn(store).value)
        flat[i] = keep
        numeric = (up - down) / (2 * step)
        err = abs(analytic[name].reshape(-1)[i] - numeric) / (abs(numeric) + 1e-8)
        worst = max(worst, err)
    return worst
