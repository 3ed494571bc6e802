"""Dense float64 tensors with tape-based reverse-mode differentiation.

Every differentiable op returns a new :class:`Tensor` that remembers its
parents and a closure mapping the output gradient to parent gradients.
:func:`backward` replays the recorded ops in reverse creation order.
"""

from __future__ import annotations

import itertools
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

_sequence = itertools.count()


class DimensionError(ValueError):
    """Raised when operand shapes are incompatible."""


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name", "_parents", "_backward", "_seq", "_op")

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        name: str | None = None,
        _parents: tuple["Tensor", ...] = (),
        _backward: Callable | None = None,
        _op: str = "leaf",
    ):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name
        self._parents = _parents
        self._backward = _backward
        self._op = _op
        self._seq = next(_sequence)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def is_leaf(self) -> bool:
        return not self._parents

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _not_scalar(self.shape)

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, op={self._op}{label}, requires_grad={self.requires_grad})"

    # operator sugar
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

    def __getitem__(self, index):
        return getitem(self, index)

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def _not_scalar(shape):
    raise DimensionError(f"expected a single-element tensor, got shape {shape}")


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(data, name: str | None = None) -> Tensor:
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True, name=name)


def _make(data, parents: Sequence[Tensor], backward: Callable, op: str) -> Tensor:
    needs = any(p.requires_grad for p in parents)
    if not needs:
        return Tensor(data, _op=op)
    return Tensor(data, requires_grad=True, _parents=tuple(parents), _backward=backward, _op=op)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError as exc:
        raise DimensionError(f"{op}: cannot combine shapes {a.shape} and {b.shape}") from exc


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "add")

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(a.data + b.data, (a, b), backward, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "sub")

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make(a.data - b.data, (a, b), backward, "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "mul")

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _make(a.data * b.data, (a, b), backward, "mul")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "div")
    out = a.data / b.data

    def backward(g):
        return _unbroadcast(g / b.data, a.shape), _unbroadcast(-g * out / b.data, b.shape)

    return _make(out, (a, b), backward, "div")


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _make(-a.data, (a,), lambda g: (-g,), "neg")


def square(a) -> Tensor:
    a = as_tensor(a)
    return _make(a.data**2, (a,), lambda g: (2.0 * a.data * g,), "square")


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,), "exp")


def log(a) -> Tensor:
    a = as_tensor(a)
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _make(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


# ---------------------------------------------------------------------------
# linear algebra and shape ops


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply shapes {a.shape} and {b.shape}")

    def backward(g):
        return g @ b.data.T, a.data.T @ g

    return _make(a.data @ b.data, (a, b), backward, "matmul")


def transpose(a) -> Tensor:
    a = as_tensor(a)
    if a.ndim != 2:
        raise DimensionError(f"transpose expects a matrix, got shape {a.shape}")
    return _make(a.data.T, (a,), lambda g: (g.T,), "transpose")


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    original = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError as exc:
        raise DimensionError(f"reshape: cannot view {original} as {shape}") from exc
    return _make(out, (a,), lambda g: (g.reshape(original),), "reshape")


def getitem(a, index) -> Tensor:
    a = as_tensor(a)
    out = a.data[index]

    def backward(g):
        full = np.zeros_like(a.data)
        np.add.at(full, index, g)
        return (full,)

    return _make(np.array(out), (a,), backward, "getitem")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise DimensionError(f"concat: incompatible shapes {[t.shape for t in tensors]}") from exc
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _make(out, tensors, backward, "concat")


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.stack([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise DimensionError(f"stack: incompatible shapes {[t.shape for t in tensors]}") from exc

    def backward(g):
        return tuple(np.moveaxis(g, axis, 0))

    return _make(out, tensors, backward, "stack")


# ---------------------------------------------------------------------------
# reductions


def _expand(g: np.ndarray, shape, axis, keepdims: bool) -> np.ndarray:
    if axis is not None and not keepdims:
        g = np.expand_dims(g, axis)
    return np.broadcast_to(g, shape)


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)
    return _make(out, (a,), lambda g: (_expand(g, a.shape, axis, keepdims).copy(),), "sum")


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out = a.data.mean(axis=axis, keepdims=keepdims)
    count = a.data.size / max(out.size, 1)
    return _make(out, (a,), lambda g: (_expand(g, a.shape, axis, keepdims) / count,), "mean")


def logsumexp(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    shift = a.data.max(axis=axis, keepdims=True)
    z = np.exp(a.data - shift)
    total = z.sum(axis=axis, keepdims=True)
    out = (np.log(total) + shift).squeeze(axis)
    weights = z / total
    return _make(out, (a,), lambda g: (np.expand_dims(g, axis) * weights,), "logsumexp")


def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    z = np.exp(a.data - a.data.max(axis=axis, keepdims=True))
    out = z / z.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _make(out, (a,), backward, "softmax")


def log_softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    probs = np.exp(out)

    def backward(g):
        return (g - probs * g.sum(axis=axis, keepdims=True),)

    return _make(out, (a,), backward, "log_softmax")


# ---------------------------------------------------------------------------
# similarity


def l2_normalize(a, axis: int = -1) -> Tensor:
    """Divide by the Euclidean norm along ``axis``; all-zero slices map to zero."""
    a = as_tensor(a)
    norm = np.sqrt((a.data * a.data).sum(axis=axis, keepdims=True))
    nonzero = norm > 0.0
    safe = np.where(nonzero, norm, 1.0)
    out = np.where(nonzero, a.data / safe, 0.0)

    def backward(g):
        proj = (g * out).sum(axis=axis, keepdims=True)
        return (np.where(nonzero, (g - out * proj) / safe, 0.0),)

    return _make(out, (a,), backward, "l2_normalize")


def cosine(u, v) -> Tensor:
    """Cosine similarity of two equal-length vectors (0 if either is zero)."""
    u, v = as_tensor(u), as_tensor(v)
    if u.shape != v.shape:
        raise DimensionError(f"cosine: shapes {u.shape} and {v.shape} differ")
    return tsum(l2_normalize(u) * l2_normalize(v))


def rowwise_cosine(a, b) -> Tensor:
    """Cosine between matching rows of two N×D matrices, returned as length N."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise DimensionError(f"rowwise_cosine: shapes {a.shape} and {b.shape} differ")
    return tsum(l2_normalize(a, axis=1) * l2_normalize(b, axis=1), axis=1)


def cosine_table(a, b) -> Tensor:
    """All-pairs cosine similarities between rows of A (N×D) and B (M×D)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise DimensionError(f"cosine_table: shapes {a.shape} and {b.shape} differ in feature size")
    return matmul(l2_normalize(a, axis=1), transpose(l2_normalize(b, axis=1)))


def topk(scores, k: int) -> np.ndarray:
    """Indices of the ``k`` largest entries along the last axis.

    Ordered by descending value, ties resolved toward the lower index.
    """
    values = scores.data if isinstance(scores, Tensor) else np.asarray(scores, dtype=np.float64)
    n = values.shape[-1]
    if not 1 <= k <= n:
        raise ValueError(f"topk: k={k} outside [1, {n}]")
    order = np.argsort(-values, axis=-1, kind="stable")
    return order[..., :k]


# ---------------------------------------------------------------------------
# reverse mode


@dataclass
class Graph:
    """Ops reachable from a root, in execution order, plus the leaf parameters."""

    ops: list[Tensor] = field(default_factory=list)
    leaves: list[Tensor] = field(default_factory=list)

    @classmethod
    def trace(cls, root: Tensor) -> "Graph":
        seen: set[int] = set()
        nodes: list[Tensor] = []
        stack_ = [root]
        while stack_:
            node = stack_.pop()
            if id(node) in seen:
                continue
            seen.add(id(node))
            nodes.append(node)
            stack_.extend(p for p in node._parents if p.requires_grad)
        nodes.sort(key=lambda t: t._seq)
        graph = cls()
        for node in nodes:
            if node._parents:
                graph.ops.append(node)
            elif node.requires_grad:
                graph.leaves.append(node)
        return graph


def backward(loss: Tensor) -> Graph:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable leaf."""
    if loss.data.size != 1:
        raise DimensionError(f"backward needs a scalar loss, got shape {loss.shape}")
    graph = Graph.trace(loss)
    if not loss.requires_grad:
        return graph
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(graph.ops):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if not parent.requires_grad:
                continue
            pg = np.asarray(pg, dtype=np.float64)
            if id(parent) in grads:
                grads[id(parent)] = grads[id(parent)] + pg
            else:
                grads[id(parent)] = pg
    for leaf in graph.leaves:
        g = grads.get(id(leaf))
        if g is None:
            continue
        leaf.grad = g.copy() if leaf.grad is None else leaf.grad + g
    return graph


def finite_diff_check(
    f: Callable[[Sequence[Tensor]], Tensor],
    params: Sequence[Tensor],
    eps: float = 1e-5,
) -> float:
    """Max relative error between backprop and central differences.

    Relative error per coordinate is |a - n| / max(1e-8, |a| + |n|).
    """
    for p in params:
        p.grad = None
    backward(f(params))
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]
    worst = 0.0
    for p, a in zip(params, analytic):
        flat = p.data.reshape(-1)
        a_flat = a.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            hi = f(params).item()
            flat[i] = orig - eps
            lo = f(params).item()
            flat[i] = orig
            numeric = (hi - lo) / (2.0 * eps)
            err = abs(a_flat[i] - numeric) / max(1e-8, abs(a_flat[i]) + abs(numeric))
            worst = max(worst, err)
    return worst


# ---------------------------------------------------------------------------
# serialization: int32 LE rank, int32 LE extents, float64 LE row-major values


def to_bytes(t: Tensor | np.ndarray) -> bytes:
    data = np.asarray(t.data if isinstance(t, Tensor) else t, dtype="<f8")
    header = struct.pack(f"<i{data.ndim}i", data.ndim, *data.shape)
    return header + data.tobytes(order="C")


def from_bytes(buf: bytes) -> np.ndarray:
    if len(buf) < 4:
        raise ValueError("truncated tensor header")
    (rank,) = struct.unpack_from("<i", buf, 0)
    if rank < 0:
        raise ValueError(f"negative tensor rank {rank}")
    shape = struct.unpack_from(f"<{rank}i", buf, 4)
    offset = 4 + 4 * rank
    count = int(np.prod(shape, dtype=np.int64))
    if len(buf) != offset + 8 * count:
        raise ValueError(f"tensor payload is {len(buf) - offset} bytes, expected {8 * count} for shape {shape}")
    return np.frombuffer(buf, dtype="<f8", count=count, offset=offset).astype(np.float64).reshape(shape)


def save_tensor(path: str | Path, t: Tensor | np.ndarray) -> None:
    Path(path).write_bytes(to_bytes(t))


def load_tensor(path: str | Path) -> np.ndarray:
    return from_bytes(Path(path).read_bytes())


def zero_grads(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None
