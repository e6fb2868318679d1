"""Dense f64 tensors with tape-free reverse-mode differentiation.

Each op returns a new :class:`Tensor` that remembers its parents and a
closure pushing the output gradient back to them.  :func:`backward` sorts the
graph topologically from a scalar loss and runs the closures once each.
"""
from __future__ import annotations

import contextlib
import itertools

import numpy as np

_node_ids = itertools.count()
_grad_enabled = True


class ShapeError(ValueError):
    pass


@contextlib.contextmanager
def no_grad():
    """Build no graph inside the block; results are constant leaves."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def is_grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "parents", "backward_fn", "op", "id")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.array(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self.parents: tuple[Tensor, ...] = ()
        self.backward_fn = None
        self.op = "leaf"
        self.id = next(_node_ids)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    def backward(self):
        backward(self)

    # operator sugar
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
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return slice_(self, index)

    @property
    def T(self):
        return transpose(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward_fn, op) -> Tensor:
    out = Tensor(data)
    out.op = op
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.parents = tuple(parents)
        out.backward_fn = backward_fn
    return out


def _accumulate(t: Tensor, g: np.ndarray):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64, copy=True).reshape(t.shape)
    else:
        t.grad += g


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _check_broadcast(a: Tensor, b: Tensor, op: str):
    # scalars broadcast freely; otherwise only trailing row/column expansion
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


def backward(loss: Tensor):
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every leaf that requires it."""
    if loss.data.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    order: list[Tensor] = []
    seen: set[int] = set()
    stack = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if node.id in seen:
            continue
        seen.add(node.id)
        stack.append((node, True))
        for p in node.parents:
            if p.id not in seen:
                stack.append((p, False))
    grads: dict[int, np.ndarray] = {loss.id: np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(node.id, None)
        if g is None:
            continue
        if node.backward_fn is None:
            _accumulate(node, g)
            continue
        for parent, pg in zip(node.parents, node.backward_fn(g)):
            if pg is None or not parent.requires_grad:
                continue
            if parent.id in grads:
                grads[parent.id] = grads[parent.id] + pg
            else:
                grads[parent.id] = pg


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "add")

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(a.data + b.data, (a, b), bw, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "sub")

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make(a.data - b.data, (a, b), bw, "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "mul")

    def bw(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _make(a.data * b.data, (a, b), bw, "mul")


def scale(a, c: float) -> Tensor:
    return mul(a, float(c))


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "div")
    out = a.data / b.data

    def bw(g):
        return (_unbroadcast(g / b.data, a.shape),
                _unbroadcast(-g * out / b.data, b.shape))

    return _make(out, (a, b), bw, "div")


def sqrt(a: Tensor) -> Tensor:
    out = np.sqrt(a.data)

    def bw(g):
        return (g / (2.0 * out),)

    return _make(out, (a,), bw, "sqrt")


def square(a: Tensor) -> Tensor:
    def bw(g):
        return (2.0 * g * a.data,)

    return _make(a.data * a.data, (a,), bw, "square")


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0.0

    def bw(g):
        return (g * mask,)

    return _make(np.where(mask, a.data, 0.0), (a,), bw, "relu")


def clamp_min(a: Tensor, lo: float) -> Tensor:
    mask = a.data > lo

    def bw(g):
        return (g * mask,)

    return _make(np.where(mask, a.data, lo), (a,), bw, "clamp_min")


# ---------------------------------------------------------------- structural

def reshape(a: Tensor, shape) -> Tensor:
    def bw(g):
        return (g.reshape(a.shape),)

    return _make(a.data.reshape(shape), (a,), bw, "reshape")


def transpose(a: Tensor) -> Tensor:
    if a.ndim != 2:
        raise ShapeError(f"transpose expects a matrix, got shape {a.shape}")

    def bw(g):
        return (g.T,)

    return _make(a.data.T, (a,), bw, "transpose")


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    ref = tensors[0].shape
    for t in tensors[1:]:
        if t.ndim != len(ref) or any(
            n != m for k, (n, m) in enumerate(zip(t.shape, ref)) if k != axis % len(ref)
        ):
            raise ShapeError(f"concat(axis={axis}): shapes {ref} and {t.shape} differ off-axis")
    sizes = [t.shape[axis] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, cuts, axis=axis))

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tensors, bw, "concat")


def slice_(a: Tensor, index) -> Tensor:
    out = a.data[index]

    def bw(g):
        full = np.zeros_like(a.data)
        np.add.at(full, index, g)
        return (full,)

    return _make(np.array(out), (a,), bw, "slice")


def gather(a: Tensor, idx) -> Tensor:
    """Rows of ``a`` selected by integer array ``idx`` (repeats allowed)."""
    idx = np.asarray(idx, dtype=np.int64)

    def bw(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        return (full,)

    return _make(a.data[idx], (a,), bw, "gather")


def segment_sum(a: Tensor, seg, n: int) -> Tensor:
    """Sum rows of ``a`` into ``n`` buckets given by ``seg``."""
    seg = np.asarray(seg, dtype=np.int64)
    if seg.shape[0] != a.shape[0]:
        raise ShapeError(f"segment_sum: {seg.shape[0]} ids for {a.shape[0]} rows")
    out = np.zeros((n,) + a.shape[1:])
    np.add.at(out, seg, a.data)

    def bw(g):
        return (g[seg],)

    return _make(out, (a,), bw, "segment_sum")


# ---------------------------------------------------------------- reductions

def sum_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape),)

    return _make(out, (a,), bw, "sum")


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = a.data.size if axis is None else a.shape[axis]
    return mul(sum_(a, axis=axis, keepdims=keepdims), 1.0 / n)


def l2norm(a: Tensor, axis: int = -1, keepdims: bool = False) -> Tensor:
    out = np.sqrt((a.data * a.data).sum(axis=axis, keepdims=True))

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        with np.errstate(invalid="ignore", divide="ignore"):
            return (np.where(out > 0.0, g * a.data / out, 0.0),)

    return _make(out if keepdims else np.squeeze(out, axis=axis), (a,), bw, "l2norm")


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _make(out, (a,), bw, "softmax")


def segment_softmax(scores: Tensor, seg, n: int) -> Tensor:
    """Softmax of a 1-D score vector within each group of equal ``seg`` ids."""
    seg = np.asarray(seg, dtype=np.int64)
    if scores.ndim != 1 or seg.shape != scores.shape:
        raise ShapeError(f"segment_softmax: scores {scores.shape}, ids {seg.shape}")
    peak = np.full(n, -np.inf)
    np.maximum.at(peak, seg, scores.data)
    e = np.exp(scores.data - peak[seg])
    tot = np.zeros(n)
    np.add.at(tot, seg, e)
    out = e / tot[seg]

    def bw(g):
        dot = np.zeros(n)
        np.add.at(dot, seg, g * out)
        return (out * (g - dot[seg]),)

    return _make(out, (scores,), bw, "segment_softmax")


def mse(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"mse: shapes {a.shape} and {b.shape} differ")
    diff = a.data - b.data
    n = diff.size

    def bw(g):
        return 2.0 * g * diff / n, -2.0 * g * diff / n

    return _make(np.mean(diff * diff), (a, b), bw, "mse")


# ---------------------------------------------------------------- linear algebra

def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim not in (1, 2) or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} do not chain")

    def bw(g):
        if b.ndim == 1:
            return np.outer(g, b.data), a.data.T @ g
        return g @ b.data.T, a.data.T @ g

    return _make(a.data @ b.data, (a, b), bw, "matmul")


def bmv(m: Tensor, v: Tensor) -> Tensor:
    """Batched matrix-vector product: (B,p,q) x (B,q) -> (B,p)."""
    m, v = as_tensor(m), as_tensor(v)
    if m.ndim != 3 or v.ndim != 2 or m.shape[0] != v.shape[0] or m.shape[2] != v.shape[1]:
        raise ShapeError(f"bmv: shapes {m.shape} and {v.shape} do not chain")

    def bw(g):
        return g[:, :, None] * v.data[:, None, :], np.einsum("bpq,bp->bq", m.data, g)

    return _make(np.einsum("bpq,bq->bp", m.data, v.data), (m, v), bw, "bmv")


def cross(a: Tensor, b: Tensor) -> Tensor:
    """Row-wise cross product of (n,3) tensors."""
    if a.shape != b.shape or a.shape[-1] != 3:
        raise ShapeError(f"cross: shapes {a.shape} and {b.shape}")

    def bw(g):
        return np.cross(b.data, g), np.cross(g, a.data)

    return _make(np.cross(a.data, b.data), (a, b), bw, "cross")
