"""Reverse-mode automatic differentiation on numpy arrays.

A computation is built as a graph of `Node` objects, each holding a value
(ndarray), a gradient buffer of the same shape, and a closure that pushes
the node's gradient back to its parents.  `backward` walks the graph in
reverse topological order and accumulates gradients additively, so a node
feeding several consumers receives the sum of all path gradients.

Everything runs in 64-bit floats by default; pass float32 arrays in if you
want speed over oracle-grade precision.
"""

from __future__ import annotations

import hashlib
import itertools
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ContractViolation

DEFAULT_DTYPE = np.float64

_node_ids = itertools.count()


def _asarray(x, dtype=None) -> np.ndarray:
    a = np.asarray(x, dtype=dtype)
    if a.dtype.kind != "f":
        a = a.astype(DEFAULT_DTYPE)
    return a


def _combine(op: str, fn, a, b) -> np.ndarray:
    try:
        return fn(a.value, b.value)
    except ValueError:
        raise ContractViolation(
            f"{op}: incompatible shapes {a.value.shape} and {b.value.shape}")


class Node:
    """One vertex of the differentiation graph."""

    __slots__ = ("id", "value", "grad", "parents", "op", "_backward")

    def __init__(self, value, parents: tuple = (), op: str = "leaf",
                 backward: Callable[[np.ndarray], None] | None = None):
        self.id = next(_node_ids)
        self.value = _asarray(value)
        self.grad: np.ndarray | None = None
        self.parents = parents
        self.op = op
        self._backward = backward

    @property
    def shape(self):
        return self.value.shape

    def ensure_grad(self) -> np.ndarray:
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        return self.grad

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Node(id={self.id}, op={self.op}, shape={self.value.shape})"

    # Arithmetic sugar so model code reads naturally.
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)


def as_node(x) -> Node:
    return x if isinstance(x, Node) else Node(x)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `g` down to `shape`, undoing numpy broadcasting."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _acc(parent: Node, g: np.ndarray):
    parent.ensure_grad()
    parent.grad += _unbroadcast(g, parent.value.shape)


def backward(root: Node):
    """Accumulate d(root)/d(node) into `.grad` of every reachable node.

    `root` must be a scalar (size-1) node.  Gradients add up across calls;
    call `zero_grad` on leaves between steps.
    """
    if root.value.size != 1:
        raise ContractViolation(
            f"backward: root must be scalar, got shape {root.value.shape}")
    order: list[Node] = []
    seen: set[int] = set()
    stack: list[tuple[Node, bool]] = [(root, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            order.append(node)
            continue
        if node.id in seen:
            continue
        seen.add(node.id)
        stack.append((node, True))
        for p in node.parents:
            if p.id not in seen:
                stack.append((p, False))
    root.ensure_grad()
    root.grad += np.ones_like(root.value)
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


# ---------------------------------------------------------------------------
# elementwise ops

def add(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    out = Node(_combine("add", lambda x, y: x + y, a, b), (a, b), "add")

    def _bw(g):
        _acc(a, g)
        _acc(b, g)

    out._backward = _bw
    return out


def sub(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    out = Node(_combine("sub", lambda x, y: x - y, a, b), (a, b), "sub")

    def _bw(g):
        _acc(a, g)
        _acc(b, -g)

    out._backward = _bw
    return out


def mul(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    out = Node(_combine("mul", lambda x, y: x * y, a, b), (a, b), "mul")

    def _bw(g):
        _acc(a, g * b.value)
        _acc(b, g * a.value)

    out._backward = _bw
    return out


def neg(a) -> Node:
    a = as_node(a)
    out = Node(-a.value, (a,), "neg")
    out._backward = lambda g: _acc(a, -g)
    return out


def scale(a, c: float) -> Node:
    """Multiply by a python constant (no gradient to the constant)."""
    a = as_node(a)
    out = Node(a.value * c, (a,), "scale")
    out._backward = lambda g: _acc(a, g * c)
    return out


def exp(a) -> Node:
    a = as_node(a)
    y = np.exp(a.value)
    out = Node(y, (a,), "exp")
    out._backward = lambda g: _acc(a, g * y)
    return out


def log(a) -> Node:
    a = as_node(a)
    out = Node(np.log(a.value), (a,), "log")
    out._backward = lambda g: _acc(a, g / a.value)
    return out


def tanh(a) -> Node:
    a = as_node(a)
    y = np.tanh(a.value)
    out = Node(y, (a,), "tanh")
    out._backward = lambda g: _acc(a, g * (1.0 - y * y))
    return out


def sigmoid(a) -> Node:
    a = as_node(a)
    y = 1.0 / (1.0 + np.exp(-a.value))
    out = Node(y, (a,), "sigmoid")
    out._backward = lambda g: _acc(a, g * y * (1.0 - y))
    return out


def swish(a) -> Node:
    """x * sigmoid(x), a single tape node."""
    a = as_node(a)
    s = 1.0 / (1.0 + np.exp(-a.value))
    y = a.value * s
    out = Node(y, (a,), "swish")
    out._backward = lambda g: _acc(a, g * (s + a.value * s * (1.0 - s)))
    return out


# ---------------------------------------------------------------------------
# reductions and normalizers

def sum_(a, axis=None, keepdims=False) -> Node:
    a = as_node(a)
    out = Node(a.value.sum(axis=axis, keepdims=keepdims), (a,), "sum")

    def _bw(g):
        g = np.asarray(g)
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _acc(a, np.broadcast_to(g, a.value.shape))

    out._backward = _bw
    return out


def mean(a, axis=None, keepdims=False) -> Node:
    a = as_node(a)
    n = a.value.size if axis is None else a.value.shape[axis]
    return scale(sum_(a, axis=axis, keepdims=keepdims), 1.0 / n)


def softmax(z, axis: int = -1) -> Node:
    """Numerically stabilized softmax along `axis`."""
    z = as_node(z)
    shifted = z.value - z.value.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)
    out = Node(y, (z,), "softmax")

    def _bw(g):
        dot = (g * y).sum(axis=axis, keepdims=True)
        _acc(z, (g - dot) * y)

    out._backward = _bw
    return out


def log_softmax(z, axis: int = -1) -> Node:
    z = as_node(z)
    shifted = z.value - z.value.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    y = shifted - lse
    out = Node(y, (z,), "log_softmax")

    def _bw(g):
        _acc(z, g - np.exp(y) * g.sum(axis=axis, keepdims=True))

    out._backward = _bw
    return out


# ---------------------------------------------------------------------------
# linear algebra and shape ops

def matmul(a, b) -> Node:
    """Matrix product with numpy broadcasting on leading (batch) dims."""
    a, b = as_node(a), as_node(b)
    out = Node(_combine("matmul", lambda x, y: x @ y, a, b), (a, b), "matmul")

    def _bw(g):
        ga = g @ np.swapaxes(b.value, -1, -2)
        gb = np.swapaxes(a.value, -1, -2) @ g
        _acc(a, ga)
        _acc(b, gb)

    out._backward = _bw
    return out


def reshape(a, shape) -> Node:
    a = as_node(a)
    out = Node(a.value.reshape(shape), (a,), "reshape")
    out._backward = lambda g: _acc(a, g.reshape(a.value.shape))
    return out


def transpose(a, axes) -> Node:
    a = as_node(a)
    inv = np.argsort(axes)
    out = Node(a.value.transpose(axes), (a,), "transpose")
    out._backward = lambda g: _acc(a, g.transpose(inv))
    return out


def take_slice(a, index) -> Node:
    """Basic (slice/int tuple) indexing with scatter-add backward."""
    a = as_node(a)
    out = Node(a.value[index], (a,), "slice")

    def _bw(g):
        buf = np.zeros_like(a.value)
        buf[index] = g
        _acc(a, buf)

    out._backward = _bw
    return out


def concat(nodes: Sequence[Node], axis: int = 0) -> Node:
    nodes = [as_node(n) for n in nodes]
    out = Node(np.concatenate([n.value for n in nodes], axis=axis),
               tuple(nodes), "concat")
    sizes = [n.value.shape[axis] for n in nodes]
    splits = np.cumsum(sizes)[:-1]

    def _bw(g):
        for n, piece in zip(nodes, np.split(g, splits, axis=axis)):
            _acc(n, piece)

    out._backward = _bw
    return out


def gather_rows(table, ids) -> Node:
    """Embedding lookup: rows `ids` of a 2-D table, scatter-add backward."""
    table = as_node(table)
    idx = np.asarray(ids, dtype=np.intp)
    out = Node(table.value[idx], (table,), "gather_rows")

    def _bw(g):
        buf = np.zeros_like(table.value)
        np.add.at(buf, idx, g)
        _acc(table, buf)

    out._backward = _bw
    return out


# ---------------------------------------------------------------------------
# parameters

def _path_rng(seed: int, path: str) -> np.random.Generator:
    # Per-path seeding keeps inits independent of creation order, so adding
    # or removing one parameter never shifts another's initial value.
    digest = hashlib.sha256(path.encode("utf-8")).digest()
    words = [int.from_bytes(digest[i:i + 8], "little") for i in range(0, 32, 8)]
    return np.random.default_rng([seed & 0xFFFFFFFFFFFFFFFF, *words])


class ParamStore:
    """Named map from parameter path to Node, with path aliasing.

    Aliasing lets two logical layers resolve to the same underlying Node
    (same id, same storage), which is how weight sharing is expressed.
    """

    def __init__(self, rng_seed: int = 0, dtype=DEFAULT_DTYPE):
        self.rng_seed = rng_seed
        self.dtype = dtype
        self._params: dict[str, Node] = {}
        self._aliases: dict[str, str] = {}

    def resolve(self, path: str) -> str:
        seen = set()
        while path in self._aliases:
            if path in seen:
                raise ContractViolation(f"alias cycle at {path!r}")
            seen.add(path)
            path = self._aliases[path]
        return path

    def create(self, path: str, shape: tuple, init: str = "uniform_fanin",
               fan_in: int | None = None) -> Node:
        if path in self._params or path in self._aliases:
            raise ContractViolation(f"parameter path {path!r} already exists")
        shape = tuple(shape)
        if init == "zeros":
            value = np.zeros(shape, dtype=self.dtype)
        elif init == "ones":
            value = np.ones(shape, dtype=self.dtype)
        elif init == "uniform_fanin":
            fan = fan_in if fan_in is not None else (shape[0] if shape else 1)
            bound = 1.0 / np.sqrt(max(fan, 1))
            rng = _path_rng(self.rng_seed, path)
            value = rng.uniform(-bound, bound, size=shape).astype(self.dtype)
        else:
            raise ContractViolation(f"unknown init {init!r}")
        node = Node(value, op=f"param:{path}")
        self._params[path] = node
        return node

    def alias(self, path: str, target: str):
        """Make `path` resolve to the existing parameter at `target`."""
        if path in self._params:
            raise ContractViolation(f"{path!r} already holds a parameter")
        if self.resolve(target) not in self._params:
            raise ContractViolation(f"alias target {target!r} does not exist")
        self._aliases[path] = target

    def get(self, path: str) -> Node:
        real = self.resolve(path)
        if real not in self._params:
            raise KeyError(path)
        return self._params[real]

    def __contains__(self, path: str) -> bool:
        return self.resolve(path) in self._params

    def items(self) -> Iterable[tuple[str, Node]]:
        """Real (non-alias) parameters in sorted path order."""
        for path in sorted(self._params):
            yield path, self._params[path]

    def paths(self) -> list[str]:
        return sorted(self._params)

    def zero_grad(self):
        for node in self._params.values():
            node.zero_grad()

    def num_entries(self) -> int:
        return sum(n.value.size for n in self._params.values())


# ---------------------------------------------------------------------------
# finite differences (test oracle)

def finite_diff_grad(f: Callable[[], float], arrays: Sequence[np.ndarray],
                     eps: float = 1e-4) -> list[np.ndarray]:
    """Central-difference gradient of scalar `f` w.r.t. each array, in place.

    `f` must be deterministic and read the arrays by reference; entries are
    perturbed and restored one at a time.
    """
    grads = []
    for arr in arrays:
        g = np.zeros_like(arr)
        flat = arr.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            hi = f()
            flat[i] = orig - eps
            lo = f()
            flat[i] = orig
            gflat[i] = (hi - lo) / (2.0 * eps)
        grads.append(g)
    return grads


def finite_diff_sample(f: Callable[[], float], arrays: Sequence[np.ndarray],
                       per_array: int, rng: np.random.Generator,
                       eps: float = 1e-4) -> list[tuple[np.ndarray, np.ndarray]]:
    """Central differences at `per_array` random entries of each array.

    Full finite differencing over a whole model is quadratic-cost; spot
    checks at sampled coordinates keep end-to-end gradient verification
    tractable.  Returns (flat_indices, estimates) per array.
    """
    out = []
    for arr in arrays:
        flat = arr.reshape(-1)
        k = min(per_array, flat.size)
        idx = rng.choice(flat.size, size=k, replace=False)
        est = np.zeros(k)
        for j, i in enumerate(idx):
            orig = flat[i]
            flat[i] = orig + eps
            hi = f()
            flat[i] = orig - eps
            lo = f()
            flat[i] = orig
            est[j] = (hi - lo) / (2.0 * eps)
        out.append((idx, est))
    return out
