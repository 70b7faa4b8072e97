"""Reverse-mode automatic differentiation on dense numpy arrays.

A ``Tensor`` wraps an ndarray and records a closure per op; ``backward()``
walks the recorded graph in reverse topological order. Arrays are float32
unless float64 input is given (gradient checks run the whole model in
float64). Ops whose inputs all have ``requires_grad=False`` skip graph
construction entirely, so frozen-encoder passes cost no tape overhead.

The graph is rebuilt from scratch on every forward pass and dropped with
the output tensors; parameters are the only long-lived nodes.
"""

from __future__ import annotations

import numpy as np

from .errors import EmptyInputError, ShapeMismatchError
from . import kernels

_CHECKED = False


def set_checked(flag: bool) -> None:
    """Enable per-op finiteness assertions (slow; for tests)."""
    global _CHECKED
    _CHECKED = bool(flag)


def _as_array(data):
    arr = np.asarray(data)
    if arr.dtype == np.float64:
        return arr
    if arr.dtype != np.float32:
        arr = arr.astype(np.float32)
    return arr


def _unbroadcast(grad, shape):
    """Sum grad down to `shape` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_backward", "_prev")

    def __init__(self, data, requires_grad: bool = False):
        self.data = _as_array(data)
        self.requires_grad = requires_grad
        self.grad = None
        self._backward = None
        self._prev = ()

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def _accumulate(self, grad):
        # grads are never mutated in place, so views may be stored directly
        if self.grad is None:
            self.grad = grad
        else:
            self.grad = self.grad + grad

    def backward(self, grad=None) -> None:
        if grad is None:
            if self.data.size != 1:
                raise ShapeMismatchError("backward() without a seed needs a scalar output")
            grad = np.ones_like(self.data)
        topo = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._prev:
                if id(parent) not in visited:
                    stack.append((parent, False))
        self.grad = np.asarray(grad, dtype=self.data.dtype)
        for node in reversed(topo):
            if node._backward is not None:
                node._backward()

    # ---- op plumbing -------------------------------------------------

    @staticmethod
    def _make(data, parents, backward):
        if _CHECKED and not np.all(np.isfinite(data)):
            raise FloatingPointError("non-finite value produced in checked mode")
        need = any(p.requires_grad for p in parents)
        out = Tensor(data, requires_grad=need)
        if need:
            out._prev = tuple(parents)
            out._backward = backward(out)
        return out

    def _coerce(self, other):
        if isinstance(other, Tensor):
            return other
        # scalars adopt this tensor's dtype so float32 graphs stay float32
        return Tensor(np.asarray(other, dtype=self.data.dtype))

    # ---- elementwise arithmetic (broadcasting) -----------------------

    def __add__(self, other):
        other = self._coerce(other)
        a, b = self, other

        def bw(out):
            def run():
                if a.requires_grad:
                    a._accumulate(_unbroadcast(out.grad, a.data.shape))
                if b.requires_grad:
                    b._accumulate(_unbroadcast(out.grad, b.data.shape))
            return run

        return self._make(a.data + b.data, (a, b), bw)

    __radd__ = __add__

    def __neg__(self):
        a = self

        def bw(out):
            def run():
                if a.requires_grad:
                    a._accumulate(-out.grad)
            return run

        return self._make(-a.data, (a,), bw)

    def __sub__(self, other):
        other = self._coerce(other)
        a, b = self, other

        def bw(out):
            def run():
                if a.requires_grad:
                    a._accumulate(_unbroadcast(out.grad, a.data.shape))
                if b.requires_grad:
                    b._accumulate(_unbroadcast(-out.grad, b.data.shape))
            return run

        return self._make(a.data - b.data, (a, b), bw)

    def __rsub__(self, other):
        return self._coerce(other).__sub__(self)

    def __mul__(self, other):
        other = self._coerce(other)
        a, b = self, other

        def bw(out):
            def run():
                if a.requires_grad:
                    a._accumulate(_unbroadcast(out.grad * b.data, a.data.shape))
                if b.requires_grad:
                    b._accumulate(_unbroadcast(out.grad * a.data, b.data.shape))
            return run

        return self._make(a.data * b.data, (a, b), bw)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = self._coerce(other)
        a, b = self, other

        def bw(out):
            def run():
                if a.requires_grad:
                    a._accumulate(_unbroadcast(out.grad / b.data, a.data.shape))
                if b.requires_grad:
                    b._accumulate(_unbroadcast(-out.grad * a.data / (b.data * b.data), b.data.shape))
            return run

        return self._make(a.data / b.data, (a, b), bw)

    def __rtruediv__(self, other):
        return self._coerce(other).__truediv__(self)

    def __pow__(self, exponent):
        if not np.isscalar(exponent):
            raise ShapeMismatchError("only scalar exponents are supported")
        a = self

        def bw(out):
            def run():
                if a.requires_grad:
                    a._accumulate(out.grad * exponent * a.data ** (exponent - 1))
            return run

        return self._make(a.data ** exponent, (a,), bw)

    # ---- matmul ------------------------------------------------------

    def __matmul__(self, other):
        other = self._coerce(other)
        a, b = self, other
        if a.data.ndim != 2 or b.data.ndim != 2:
            raise ShapeMismatchError("matmul expects rank-2 tensors")
        if a.data.shape[1] != b.data.shape[0]:
            raise ShapeMismatchError(
                f"matmul inner dims differ: {a.data.shape} @ {b.data.shape}")

        def bw(out):
            def run():
                if a.requires_grad:
                    a._accumulate(out.grad @ b.data.T)
                if b.requires_grad:
                    b._accumulate(a.data.T @ out.grad)
            return run

        return self._make(a.data @ b.data, (a, b), bw)

    # ---- nonlinearities ---------------------------------------------

    def exp(self):
        a = self

        def bw(out):
            def run():
                if a.requires_grad:
                    a._accumulate(out.grad * out.data)
            return run

        return self._make(np.exp(a.data), (a,), bw)

    def log(self):
        a = self

        def bw(out):
            def run():
                if a.requires_grad:
                    a._accumulate(out.grad / a.data)
            return run

        return self._make(np.log(a.data), (a,), bw)

    def sqrt(self):
        a = self

        def bw(out):
            def run():
                if a.requires_grad:
                    a._accumulate(out.grad * 0.5 / out.data)
            return run

        return self._make(np.sqrt(a.data), (a,), bw)

    def tanh(self):
        a = self

        def bw(out):
            def run():
                if a.requires_grad:
                    a._accumulate(out.grad * (1.0 - out.data * out.data))
            return run

        return self._make(np.tanh(a.data), (a,), bw)

    def sigmoid(self):
        a = self
        data = 1.0 / (1.0 + np.exp(-a.data))

        def bw(out):
            def run():
                if a.requires_grad:
                    a._accumulate(out.grad * out.data * (1.0 - out.data))
            return run

        return self._make(data, (a,), bw)

    def relu(self):
        a = self

        def bw(out):
            def run():
                if a.requires_grad:
                    a._accumulate(out.grad * (a.data > 0))
            return run

        return self._make(np.maximum(a.data, 0), (a,), bw)

    def gelu(self):
        # tanh approximation; smooth, so finite differences stay clean
        a = self
        c = float(np.sqrt(2.0 / np.pi))
        u = c * (a.data + 0.044715 * a.data ** 3)
        t = np.tanh(u)
        data = 0.5 * a.data * (1.0 + t)

        def bw(out):
            def run():
                if a.requires_grad:
                    du = c * (1.0 + 3 * 0.044715 * a.data ** 2)
                    d = 0.5 * (1.0 + t) + 0.5 * a.data * (1.0 - t * t) * du
                    a._accumulate(out.grad * d)
            return run

        return self._make(data, (a,), bw)

    # ---- reductions --------------------------------------------------

    def sum(self, axis=None, keepdims=False):
        a = self

        def bw(out):
            def run():
                if not a.requires_grad:
                    return
                g = out.grad
                if axis is not None and not keepdims:
                    g = np.expand_dims(g, axis)
                a._accumulate(np.broadcast_to(g, a.data.shape).astype(a.data.dtype))
            return run

        return self._make(a.data.sum(axis=axis, keepdims=keepdims), (a,), bw)

    def mean(self, axis=None, keepdims=False):
        if axis is None:
            n = self.data.size
        else:
            n = self.data.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    # ---- shape ops ---------------------------------------------------

    @property
    def T(self):
        a = self
        if a.data.ndim != 2:
            raise ShapeMismatchError("T expects a rank-2 tensor")

        def bw(out):
            def run():
                if a.requires_grad:
                    a._accumulate(out.grad.T)
            return run

        return self._make(a.data.T.copy(), (a,), bw)

    def reshape(self, *shape):
        a = self

        def bw(out):
            def run():
                if a.requires_grad:
                    a._accumulate(out.grad.reshape(a.data.shape))
            return run

        return self._make(a.data.reshape(*shape), (a,), bw)

    def __getitem__(self, key):
        a = self

        def bw(out):
            def run():
                if a.requires_grad:
                    g = np.zeros_like(a.data)
                    g[key] += out.grad
                    a._accumulate(g)
            return run

        return self._make(a.data[key].copy(), (a,), bw)


def concat(tensors, axis: int = 0) -> Tensor:
    """Concatenate along an axis; gradients are split back to the inputs."""
    tensors = [t if isinstance(t, Tensor) else Tensor(t) for t in tensors]
    if not tensors:
        raise EmptyInputError("concat of zero tensors")
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bw(out):
        def run():
            for t, o, s in zip(tensors, offsets[:-1], sizes):
                if t.requires_grad:
                    sl = [slice(None)] * out.grad.ndim
                    sl[axis] = slice(o, o + s)
                    t._accumulate(out.grad[tuple(sl)])
        return run

    return Tensor._make(np.concatenate([t.data for t in tensors], axis=axis), tensors, bw)


def embedding(table: Tensor, ids) -> Tensor:
    """Row lookup table[ids] with scatter-add into the table's gradient."""
    ids = np.asarray(ids, dtype=np.int64)
    if ids.ndim != 1:
        raise ShapeMismatchError("embedding ids must be a flat sequence")

    def bw(out):
        def run():
            if table.requires_grad:
                g = np.zeros_like(table.data)
                np.add.at(g, ids, out.grad)
                table._accumulate(g)
        return run

    return Tensor._make(table.data[ids], (table,), bw)


def scatter_sum(src: Tensor, src_idx, dst_idx, n_out: int) -> Tensor:
    """out[dst_idx[k]] += src[src_idx[k]]; the edge-message primitive."""
    src_idx = np.ascontiguousarray(src_idx, dtype=np.int64)
    dst_idx = np.ascontiguousarray(dst_idx, dtype=np.int64)
    if src_idx.shape != dst_idx.shape:
        raise ShapeMismatchError("scatter index arrays differ in length")
    data = np.zeros((n_out, src.data.shape[1]), dtype=src.data.dtype)
    kernels.scatter_add_rows(data, dst_idx, src.data, src_idx)

    def bw(out):
        def run():
            if src.requires_grad:
                g = np.zeros_like(src.data)
                kernels.scatter_add_rows(g, src_idx, out.grad, dst_idx)
                src._accumulate(g)
        return run

    return Tensor._make(data, (src,), bw)


def softmax_rows(x: Tensor) -> Tensor:
    """Row-wise softmax, stabilized by subtracting the row max."""
    if x.data.size == 0:
        raise EmptyInputError("softmax of an empty tensor")
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    p = e / e.sum(axis=-1, keepdims=True)

    def bw(out):
        def run():
            if x.requires_grad:
                g = out.grad
                dot = (g * out.data).sum(axis=-1, keepdims=True)
                x._accumulate(out.data * (g - dot))
        return run

    return Tensor._make(p, (x,), bw)


_CAUSAL_MASKS = {}


def _causal_mask(n: int, dtype) -> np.ndarray:
    key = (n, np.dtype(dtype).name)
    if key not in _CAUSAL_MASKS:
        m = np.zeros((n, n), dtype=dtype)
        m[np.triu_indices(n, k=1)] = -1e9
        _CAUSAL_MASKS[key] = m
    return _CAUSAL_MASKS[key]


def attention_heads(q: Tensor, k: Tensor, v: Tensor, n_heads: int,
                    causal: bool = False) -> Tensor:
    """Scaled dot-product attention with the last axis split into heads.

    One tape node for the whole softmax(QK^T/sqrt(dk))V computation; the
    causal variant adds a cached additive mask so query i ignores keys j>i.
    """
    n_q, d = q.shape
    n_kv = k.shape[0]
    if d % n_heads != 0:
        raise ShapeMismatchError(f"width {d} not divisible by {n_heads} heads")
    if k.shape[1] != d or v.shape[1] != d:
        raise ShapeMismatchError(
            f"q/k/v widths differ: {q.shape}/{k.shape}/{v.shape}")
    if v.shape[0] != n_kv:
        raise ShapeMismatchError("K and V must share sequence length")
    if causal and n_q != n_kv:
        raise ShapeMismatchError("causal attention needs equal Q and K lengths")
    dk = d // n_heads
    # plain-float scale so float32 inputs stay float32
    scale = float(1.0 / np.sqrt(dk))
    qh = q.data.reshape(n_q, n_heads, dk).transpose(1, 0, 2)
    kh = k.data.reshape(n_kv, n_heads, dk).transpose(1, 0, 2)
    vh = v.data.reshape(n_kv, n_heads, dk).transpose(1, 0, 2)
    s = np.matmul(qh, kh.transpose(0, 2, 1)) * scale
    if causal:
        s = s + _causal_mask(n_q, s.dtype)
    s -= s.max(axis=-1, keepdims=True)
    e = np.exp(s)
    p = e / e.sum(axis=-1, keepdims=True)
    o = np.matmul(p, vh)

    def bw(out):
        def run():
            g = out.grad.reshape(n_q, n_heads, dk).transpose(1, 0, 2)
            if v.requires_grad:
                gv = np.matmul(p.transpose(0, 2, 1), g)
                v._accumulate(gv.transpose(1, 0, 2).reshape(n_kv, d))
            if q.requires_grad or k.requires_grad:
                gp = np.matmul(g, vh.transpose(0, 2, 1))
                gs = (p * (gp - (gp * p).sum(axis=-1, keepdims=True))) * scale
                if q.requires_grad:
                    gq = np.matmul(gs, kh)
                    q._accumulate(gq.transpose(1, 0, 2).reshape(n_q, d))
                if k.requires_grad:
                    gk = np.matmul(gs.transpose(0, 2, 1), qh)
                    k._accumulate(gk.transpose(1, 0, 2).reshape(n_kv, d))
        return run

    return Tensor._make(o.transpose(1, 0, 2).reshape(n_q, d), (q, k, v), bw)


def softmax_vec(v) -> np.ndarray:
    """Plain-array softmax of a length>=1 vector (no tape)."""
    arr = np.asarray(v, dtype=np.float64)
    if arr.ndim != 1 or arr.size == 0:
        raise EmptyInputError("softmax expects a non-empty vector")
    if not np.all(np.isfinite(arr)):
        raise FloatingPointError("softmax input must be finite")
    e = np.exp(arr - arr.max())
    return e / e.sum()


def cross_entropy_rows(logits: Tensor, targets) -> Tensor:
    """Sum over rows of -log softmax(logits)[target]; stable log-sum-exp."""
    targets = np.asarray(targets, dtype=np.int64)
    if logits.data.ndim != 2:
        raise ShapeMismatchError("cross_entropy_rows expects (rows, classes)")
    if targets.shape != (logits.data.shape[0],):
        raise ShapeMismatchError("one target per logits row required")
    z = logits.data
    m = z.max(axis=-1, keepdims=True)
    e = np.exp(z - m)
    se = e.sum(axis=-1, keepdims=True)
    lse = (m + np.log(se)).reshape(-1)
    rows = np.arange(z.shape[0])
    loss = (lse - z[rows, targets]).sum()

    def bw(out):
        def run():
            if logits.requires_grad:
                p = e / se
                p[rows, targets] -= 1.0
                logits._accumulate(p.astype(z.dtype) * out.grad)
        return run

    return Tensor._make(np.asarray(loss, dtype=z.dtype), (logits,), bw)


def layer_norm_rows(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Per-row layer normalization followed by the learned affine map."""
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    data = xhat * gain.data + bias.data
    n = x.data.shape[-1]

    def bw(out):
        def run():
            g = out.grad
            if gain.requires_grad:
                gain._accumulate(_unbroadcast(g * xhat, gain.data.shape))
            if bias.requires_grad:
                bias._accumulate(_unbroadcast(g, bias.data.shape))
            if x.requires_grad:
                gh = g * gain.data
                term = gh - gh.mean(axis=-1, keepdims=True) - xhat * (gh * xhat).mean(axis=-1, keepdims=True)
                x._accumulate(term * inv)
        return run

    return Tensor._make(data, (x, gain, bias), bw)


def zero_grads(params) -> None:
    """Reset gradients on an iterable or mapping of tensors."""
    values = params.values() if hasattr(params, "values") else params
    for p in values:
        p.grad = None
