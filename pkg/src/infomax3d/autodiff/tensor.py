"""Reverse-mode automatic differentiation over numpy arrays.

Every op records itself on the computation graph (the tape) when gradients
are enabled and any input requires them. `backward()` on a scalar output
runs the chain rule once; re-running backward over already-consumed graph
nodes raises, so a fresh forward pass is needed per gradient evaluation.
Double precision throughout.
"""

from __future__ import annotations

import contextlib

import numpy as np

from .. import kernels

_grad_enabled = [True]


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block (eval-mode forward passes)."""
    _grad_enabled.append(False)
    try:
        yield
    finally:
        _grad_enabled.pop()


class Tensor:
    """A shaped float64 array with an optional gradient slot."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_consumed")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None
        self._consumed = False

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def backward(self):
        """Accumulate d(self)/d(leaf) into every requires_grad tensor's .grad."""
        if self.data.size != 1:
            raise ValueError(f"backward requires a scalar output, got shape {self.data.shape}")
        topo: list[Tensor] = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in visited:
                    stack.append((p, False))
        for node in topo:
            if node._backward is not None and node._consumed:
                raise RuntimeError("backward already ran over this tape; rebuild the forward graph first")
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None:
                node._backward()
                node._consumed = True

    # operator sugar -------------------------------------------------------
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

    # reductions / elementwise as methods
    def sum(self, axis=None, keepdims=False):
        return sum_reduce(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean_reduce(self, axis, keepdims)

    def max(self, axis=None, keepdims=False):
        return max_reduce(self, axis, keepdims)

    def min(self, axis=None, keepdims=False):
        return min_reduce(self, axis, keepdims)

    def std(self, axis=None, keepdims=False):
        return std_reduce(self, axis, keepdims)

    def relu(self):
        return relu(self)

    def sigmoid(self):
        return sigmoid(self)

    def softplus(self):
        return softplus(self)

    def log(self):
        return log(self)

    def exp(self):
        return exp(self)

    def sqrt(self):
        return sqrt(self)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    @property
    def T(self):
        return transpose(self)


def _lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents) -> Tensor:
    out = Tensor(data)
    if _grad_enabled[-1] and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
    return out


def _accum(t: Tensor, g: np.ndarray):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64, copy=True)
    else:
        t.grad = t.grad + g


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, s) in enumerate(zip(g.shape, shape)) if s == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _check_broadcast(op, a, b):
    try:
        np.broadcast_shapes(a.data.shape, b.data.shape)
    except ValueError:
        raise ValueError(f"{op}: shapes {a.data.shape} and {b.data.shape} are not broadcastable")


# elementwise binary ---------------------------------------------------------

def add(a, b):
    a, b = _lift(a), _lift(b)
    _check_broadcast("add", a, b)
    out = _make(a.data + b.data, (a, b))
    if out.requires_grad:
        def _bw():
            _accum(a, _unbroadcast(out.grad, a.data.shape))
            _accum(b, _unbroadcast(out.grad, b.data.shape))
        out._backward = _bw
    return out


def sub(a, b):
    a, b = _lift(a), _lift(b)
    _check_broadcast("sub", a, b)
    out = _make(a.data - b.data, (a, b))
    if out.requires_grad:
        def _bw():
            _accum(a, _unbroadcast(out.grad, a.data.shape))
            _accum(b, _unbroadcast(-out.grad, b.data.shape))
        out._backward = _bw
    return out


def mul(a, b):
    a, b = _lift(a), _lift(b)
    _check_broadcast("mul", a, b)
    out = _make(a.data * b.data, (a, b))
    if out.requires_grad:
        def _bw():
            _accum(a, _unbroadcast(out.grad * b.data, a.data.shape))
            _accum(b, _unbroadcast(out.grad * a.data, b.data.shape))
        out._backward = _bw
    return out


def div(a, b):
    a, b = _lift(a), _lift(b)
    _check_broadcast("div", a, b)
    out = _make(a.data / b.data, (a, b))
    if out.requires_grad:
        def _bw():
            _accum(a, _unbroadcast(out.grad / b.data, a.data.shape))
            _accum(b, _unbroadcast(-out.grad * a.data / (b.data * b.data), b.data.shape))
        out._backward = _bw
    return out


def neg(a):
    a = _lift(a)
    out = _make(-a.data, (a,))
    if out.requires_grad:
        def _bw():
            _accum(a, -out.grad)
        out._backward = _bw
    return out


# linear algebra -------------------------------------------------------------

def matmul(a, b):
    a, b = _lift(a), _lift(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ValueError(f"matmul: incompatible shapes {a.data.shape} x {b.data.shape}")
    out = _make(a.data @ b.data, (a, b))
    if out.requires_grad:
        def _bw():
            _accum(a, out.grad @ b.data.T)
            _accum(b, a.data.T @ out.grad)
        out._backward = _bw
    return out


def transpose(a):
    a = _lift(a)
    if a.data.ndim != 2:
        raise ValueError(f"transpose: expected 2-d tensor, got shape {a.data.shape}")
    out = _make(a.data.T.copy(), (a,))
    if out.requires_grad:
        def _bw():
            _accum(a, out.grad.T)
        out._backward = _bw
    return out


def reshape(a, shape):
    a = _lift(a)
    out = _make(a.data.reshape(shape), (a,))
    if out.requires_grad:
        def _bw():
            _accum(a, out.grad.reshape(a.data.shape))
        out._backward = _bw
    return out


def concat(tensors, axis=0):
    tensors = [_lift(t) for t in tensors]
    out = _make(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors))
    if out.requires_grad:
        sizes = [t.data.shape[axis] for t in tensors]
        splits = np.cumsum(sizes)[:-1]
        def _bw():
            for t, piece in zip(tensors, np.split(out.grad, splits, axis=axis)):
                _accum(t, piece)
        out._backward = _bw
    return out


# reductions -----------------------------------------------------------------

def _norm_axis(axis, ndim):
    if axis is None:
        return None
    return axis % ndim


def sum_reduce(a, axis=None, keepdims=False):
    a = _lift(a)
    axis = _norm_axis(axis, a.data.ndim)
    out = _make(a.data.sum(axis=axis, keepdims=keepdims), (a,))
    if out.requires_grad:
        def _bw():
            g = out.grad
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            _accum(a, np.broadcast_to(g, a.data.shape))
        out._backward = _bw
    return out


def mean_reduce(a, axis=None, keepdims=False):
    a = _lift(a)
    axis = _norm_axis(axis, a.data.ndim)
    count = a.data.size if axis is None else a.data.shape[axis]
    out = _make(a.data.mean(axis=axis, keepdims=keepdims), (a,))
    if out.requires_grad:
        def _bw():
            g = out.grad
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            _accum(a, np.broadcast_to(g, a.data.shape) / count)
        out._backward = _bw
    return out


def _extreme_reduce(a, axis, keepdims, np_reduce, np_arg):
    a = _lift(a)
    axis = _norm_axis(axis, a.data.ndim)
    out = _make(np_reduce(a.data, axis=axis, keepdims=keepdims), (a,))
    if out.requires_grad:
        if axis is None:
            flat_idx = np_arg(a.data)  # first attaining index in row-major order
            def _bw():
                buf = np.zeros_like(a.data)
                buf.reshape(-1)[flat_idx] = np.asarray(out.grad).reshape(-1)[0]
                _accum(a, buf)
        else:
            arg = np_arg(a.data, axis=axis)
            def _bw():
                g = out.grad if keepdims else np.expand_dims(out.grad, axis)
                buf = np.zeros_like(a.data)
                np.put_along_axis(buf, np.expand_dims(arg, axis), g, axis)
                _accum(a, buf)
        out._backward = _bw
    return out


def max_reduce(a, axis=None, keepdims=False):
    """Max reduction; the subgradient routes to the first attaining index."""
    return _extreme_reduce(a, axis, keepdims, np.max, np.argmax)


def min_reduce(a, axis=None, keepdims=False):
    return _extreme_reduce(a, axis, keepdims, np.min, np.argmin)


def _clamped_sqrt(v):
    """sqrt(max(v, 0)) with zero subgradient where the result is zero.

    Keeps std well-defined (value 0, gradient 0) for constant inputs.
    """
    v = _lift(v)
    out = _make(np.sqrt(np.maximum(v.data, 0.0)), (v,))
    if out.requires_grad:
        def _bw():
            safe = np.where(out.data > 0.0, out.data, 1.0)
            _accum(v, np.where(out.data > 0.0, out.grad * 0.5 / safe, 0.0))
        out._backward = _bw
    return out


def std_reduce(a, axis=None, keepdims=False):
    """Population standard deviation along an axis (exact 0 for constant input)."""
    a = _lift(a)
    m = mean_reduce(a, axis=axis, keepdims=True)
    d = sub(a, m)
    v = mean_reduce(mul(d, d), axis=axis, keepdims=keepdims)
    return _clamped_sqrt(v)


# elementwise unary ------------------------------------------------------------

def relu(a):
    a = _lift(a)
    out = _make(np.maximum(a.data, 0.0), (a,))
    if out.requires_grad:
        def _bw():
            _accum(a, out.grad * (a.data > 0.0))
        out._backward = _bw
    return out


def _stable_sigmoid(d):
    # exp of a non-positive argument on both branches
    e = np.exp(-np.abs(d))
    return np.where(d >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def sigmoid(a):
    a = _lift(a)
    out = _make(_stable_sigmoid(a.data), (a,))
    if out.requires_grad:
        def _bw():
            _accum(a, out.grad * out.data * (1.0 - out.data))
        out._backward = _bw
    return out


def softplus(a):
    """log(1 + e^x), computed as logaddexp(0, x); derivative is the sigmoid."""
    a = _lift(a)
    out = _make(np.logaddexp(0.0, a.data), (a,))
    if out.requires_grad:
        def _bw():
            _accum(a, out.grad * _stable_sigmoid(a.data))
        out._backward = _bw
    return out


def log(a):
    a = _lift(a)
    out = _make(np.log(a.data), (a,))
    if out.requires_grad:
        def _bw():
            _accum(a, out.grad / a.data)
        out._backward = _bw
    return out


def exp(a):
    a = _lift(a)
    out = _make(np.exp(a.data), (a,))
    if out.requires_grad:
        def _bw():
            _accum(a, out.grad * out.data)
        out._backward = _bw
    return out


def sqrt(a):
    a = _lift(a)
    out = _make(np.sqrt(a.data), (a,))
    if out.requires_grad:
        def _bw():
            _accum(a, out.grad * 0.5 / out.data)
        out._backward = _bw
    return out


def l2_norm(a):
    """Euclidean norm of the whole tensor."""
    a = _lift(a)
    return sqrt(sum_reduce(mul(a, a)))


def dropout(a, p, rng, train):
    """Inverted dropout; identity when not training or p == 0 (no rng draw)."""
    a = _lift(a)
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability {p} outside [0, 1)")
    if not train or p == 0.0:
        return a
    if rng is None:
        raise ValueError("dropout in train mode needs an rng")
    mask = (rng.random(a.data.shape) >= p) / (1.0 - p)
    out = _make(a.data * mask, (a,))
    if out.requires_grad:
        def _bw():
            _accum(a, out.grad * mask)
        out._backward = _bw
    return out


# gather / segment ops ---------------------------------------------------------

def gather_rows(a, idx):
    """out[e] = a[idx[e]]; backward scatter-adds into the source rows."""
    a = _lift(a)
    idx = np.ascontiguousarray(idx, dtype=np.int64)
    out = _make(a.data[idx], (a,))
    if out.requires_grad:
        def _bw():
            _accum(a, kernels.scatter_rows(out.grad, idx, a.data.shape[0]))
        out._backward = _bw
    return out


def _check_segment_ids(ids):
    ids = np.ascontiguousarray(ids, dtype=np.int64)
    if ids.size and np.any(np.diff(ids) < 0):
        raise ValueError("segment ids must be sorted non-decreasing")
    return ids


def segment_sum(a, ids, n):
    a = _lift(a)
    ids = _check_segment_ids(ids)
    out = _make(kernels.segment_sum(a.data, ids, n), (a,))
    if out.requires_grad:
        def _bw():
            _accum(a, out.grad[ids])
        out._backward = _bw
    return out


def segment_mean(a, ids, n):
    a = _lift(a)
    ids = _check_segment_ids(ids)
    vals, counts = kernels.segment_mean(a.data, ids, n)
    out = _make(vals, (a,))
    if out.requires_grad:
        denom = np.maximum(counts, 1).astype(np.float64)
        def _bw():
            _accum(a, out.grad[ids] / denom[ids, None])
        out._backward = _bw
    return out


def _segment_extreme(a, ids, n, kernel):
    a = _lift(a)
    ids = _check_segment_ids(ids)
    vals, args = kernel(a.data, ids, n)
    out = _make(vals, (a,))
    if out.requires_grad:
        def _bw():
            _accum(a, kernels.scatter_args(args, out.grad, a.data.shape[0]))
        out._backward = _bw
    return out


def segment_max(a, ids, n):
    """Per-segment max (0 for empty segments); ties route to the first row."""
    return _segment_extreme(a, ids, n, kernels.segment_max)


def segment_min(a, ids, n):
    return _segment_extreme(a, ids, n, kernels.segment_min)


def segment_std(a, ids, n):
    """Per-segment population std; 0 (with 0 gradient) for empty or constant segments."""
    a = _lift(a)
    ids = _check_segment_ids(ids)
    m = segment_mean(a, ids, n)
    d = sub(a, gather_rows(m, ids))
    v = segment_mean(mul(d, d), ids, n)
    return _clamped_sqrt(v)
