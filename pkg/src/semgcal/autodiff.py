"""Minimal reverse-mode automatic differentiation on numpy arrays.

A `Tensor` wraps an ndarray and records the operations that produced it;
calling `backward()` on a scalar loss walks the tape in reverse topological
order and accumulates gradients into every reachable tensor that requires
them. Only the operations needed by the two network architectures and the
adaptation losses are implemented.
"""

from __future__ import annotations

import contextlib
import threading

import numpy as np

from .errors import ShapeError, UsageError

_state = threading.local()


@contextlib.contextmanager
def no_grad():
    """Disable tape recording, e.g. for inference or statistics collection.

    The flag is thread-local so concurrent experiment cells cannot switch
    each other's recording off.
    """
    prev = getattr(_state, "grad_enabled", True)
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = prev


def grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, g: np.ndarray):
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad += g

    def backward(self):
        if self.data.size != 1:
            raise UsageError("backward() requires a scalar loss")
        if self._backward is None and not self.requires_grad:
            raise UsageError("backward() on a tensor detached from any recorded graph")
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x))


def _make(data: np.ndarray, parents: tuple[Tensor, ...], backward) -> Tensor:
    out = Tensor(data)
    if getattr(_state, "grad_enabled", True) and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(p for p in parents if p.requires_grad)
        out._backward = backward
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce a gradient back to `shape` after numpy broadcasting."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.data.shape))

    return _make(a.data + b.data, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b._accumulate(-_unbroadcast(g, b.data.shape))

    return _make(a.data - b.data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.data.shape))

    return _make(a.data * b.data, (a, b), backward)


def neg(a) -> Tensor:
    a = _as_tensor(a)

    def backward(g):
        a._accumulate(-g)

    return _make(-a.data, (a,), backward)


def exp(a) -> Tensor:
    a = _as_tensor(a)
    out_data = np.exp(a.data)

    def backward(g):
        a._accumulate(g * out_data)

    return _make(out_data, (a,), backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    def backward(g):
        if a.requires_grad:
            a._accumulate(g @ b.data.T)
        if b.requires_grad:
            b._accumulate(a.data.T @ g)

    return _make(a.data @ b.data, (a, b), backward)


def reshape(a: Tensor, shape) -> Tensor:
    old_shape = a.data.shape

    def backward(g):
        a._accumulate(g.reshape(old_shape))

    return _make(a.data.reshape(shape), (a,), backward)


def concat(tensors: list[Tensor], axis: int = 0) -> Tensor:
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(lo, hi)
                t._accumulate(g[tuple(sl)])

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), backward)


def sum_all(a: Tensor) -> Tensor:
    def backward(g):
        a._accumulate(np.broadcast_to(g, a.data.shape).astype(a.data.dtype))

    return _make(np.asarray(a.data.sum()), (a,), backward)


def mean_all(a: Tensor) -> Tensor:
    n = a.data.size

    def backward(g):
        a._accumulate(np.broadcast_to(g / n, a.data.shape).astype(a.data.dtype))

    return _make(np.asarray(a.data.mean()), (a,), backward)


def sum_axis(a: Tensor, axis: int, keepdims: bool = False) -> Tensor:
    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        a._accumulate(np.broadcast_to(g, a.data.shape).astype(a.data.dtype))

    return _make(a.data.sum(axis=axis, keepdims=keepdims), (a,), backward)


def leaky_relu(a: Tensor, slope: float = 0.1) -> Tensor:
    mask = a.data > 0
    out_data = np.where(mask, a.data, slope * a.data)

    def backward(g):
        a._accumulate(np.where(mask, g, slope * g))

    return _make(out_data, (a,), backward)


def dropout(a: Tensor, p: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout: keep with probability 1-p and scale by 1/(1-p)."""
    if p <= 0.0:
        return a
    keep = (rng.random(a.data.shape) >= p).astype(a.data.dtype) / (1.0 - p)

    def backward(g):
        a._accumulate(g * keep)

    return _make(a.data * keep, (a,), backward)


def gradient_reversal(a: Tensor, lambda_d: float = 1.0) -> Tensor:
    """Identity in the forward pass; scales the gradient by -lambda_d in the backward pass."""

    def backward(g):
        a._accumulate(-lambda_d * g)

    return _make(a.data, (a,), backward)


def linear(x: Tensor, w: Tensor, b: Tensor | None) -> Tensor:
    """x @ w.T + b with w of shape (out, in)."""

    def backward(g):
        if x.requires_grad:
            x._accumulate(g @ w.data)
        if w.requires_grad:
            w._accumulate(g.T @ x.data)
        if b is not None and b.requires_grad:
            b._accumulate(g.sum(axis=0))

    parents = (x, w) if b is None else (x, w, b)
    out_data = x.data @ w.data.T
    if b is not None:
        out_data = out_data + b.data
    return _make(out_data, parents, backward)


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """Valid (no padding), stride-1 2-D convolution via im2col.

    x: (N, C, H, W); w: (O, C, kh, kw) -> (N, O, H - kh + 1, W - kw + 1).
    """
    n, c, h, wd = x.data.shape
    o, c2, kh, kw = w.data.shape
    if c != c2:
        raise ShapeError(f"input has {c} channels but kernel expects {c2}")
    oh, ow = h - kh + 1, wd - kw + 1
    if oh < 1 or ow < 1:
        raise ShapeError(f"kernel ({kh},{kw}) larger than input ({h},{wd})")
    windows = np.lib.stride_tricks.sliding_window_view(x.data, (kh, kw), axis=(2, 3))
    cols = windows.transpose(0, 2, 3, 1, 4, 5).reshape(n * oh * ow, c * kh * kw)
    w_flat = w.data.reshape(o, -1)
    out_data = (cols @ w_flat.T).reshape(n, oh, ow, o).transpose(0, 3, 1, 2)
    if b is not None:
        out_data = out_data + b.data[None, :, None, None]

    def backward(g):
        g_mat = g.transpose(0, 2, 3, 1).reshape(n * oh * ow, o)
        if w.requires_grad:
            w._accumulate((g_mat.T @ cols).reshape(w.data.shape))
        if b is not None and b.requires_grad:
            b._accumulate(g.sum(axis=(0, 2, 3)))
        if x.requires_grad:
            dcols = (g_mat @ w_flat).reshape(n, oh, ow, c, kh, kw)
            dx = np.zeros_like(x.data)
            for i in range(kh):
                for j in range(kw):
                    dx[:, :, i : i + oh, j : j + ow] += dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
            x._accumulate(dx)

    parents = (x, w) if b is None else (x, w, b)
    return _make(np.ascontiguousarray(out_data), parents, backward)


def global_avg_pool(x: Tensor) -> Tensor:
    """(N, C, H, W) -> (N, C) mean over the spatial axes."""
    n, c, h, w = x.data.shape

    def backward(g):
        x._accumulate(np.broadcast_to(g[:, :, None, None] / (h * w), x.data.shape).astype(x.data.dtype))

    return _make(x.data.mean(axis=(2, 3)), (x,), backward)


def batch_norm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> Tensor:
    """Batch normalization over the batch (and spatial) axes.

    In training mode the batch statistics normalize and the running buffers
    are updated in place with an exponential moving average (population
    variance). In eval mode the running buffers normalize.
    """
    is_conv = x.data.ndim == 4
    axes = (0, 2, 3) if is_conv else (0,)

    def expand(v):
        return v[None, :, None, None] if is_conv else v[None, :]

    if training:
        mean = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        running_mean *= 1.0 - momentum
        running_mean += momentum * mean.astype(running_mean.dtype)
        running_var *= 1.0 - momentum
        running_var += momentum * var.astype(running_var.dtype)
        inv_std = 1.0 / np.sqrt(var + eps)
        xhat = (x.data - expand(mean)) * expand(inv_std)
        m = x.data.size // x.data.shape[1]

        def backward(g):
            if gamma.requires_grad:
                gamma._accumulate((g * xhat).sum(axis=axes))
            if beta.requires_grad:
                beta._accumulate(g.sum(axis=axes))
            if x.requires_grad:
                dxhat = g * expand(gamma.data)
                term = dxhat - dxhat.mean(axis=axes, keepdims=True) \
                    - xhat * (dxhat * xhat).sum(axis=axes, keepdims=True) / m
                x._accumulate(term * expand(inv_std))

    else:
        inv_std = 1.0 / np.sqrt(running_var.astype(x.data.dtype) + eps)
        xhat = (x.data - expand(running_mean.astype(x.data.dtype))) * expand(inv_std)

        def backward(g):
            if gamma.requires_grad:
                gamma._accumulate((g * xhat).sum(axis=axes))
            if beta.requires_grad:
                beta._accumulate(g.sum(axis=axes))
            if x.requires_grad:
                x._accumulate(g * expand(gamma.data * inv_std))

    out_data = xhat * expand(gamma.data) + expand(beta.data)
    return _make(out_data, (x, gamma, beta), backward)


def log_softmax(x: Tensor) -> Tensor:
    """Row-wise log softmax of a (N, K) tensor."""
    shifted = x.data - x.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    ls = shifted - lse
    probs = np.exp(ls)

    def backward(g):
        x._accumulate(g - probs * g.sum(axis=1, keepdims=True))

    return _make(ls, (x,), backward)


def softmax(x: Tensor) -> Tensor:
    shifted = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    p = e / e.sum(axis=1, keepdims=True)

    def backward(g):
        x._accumulate(p * (g - (g * p).sum(axis=1, keepdims=True)))

    return _make(p, (x,), backward)


def cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean negative log-likelihood of integer labels under row-wise softmax."""
    n = logits.data.shape[0]
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    ls = shifted - lse
    loss = -ls[np.arange(n), labels].mean()

    def backward(g):
        probs = np.exp(ls)
        probs[np.arange(n), labels] -= 1.0
        logits._accumulate(g * probs / n)

    return _make(np.asarray(loss, dtype=logits.data.dtype), (logits,), backward)


def entropy_of_softmax(logits: Tensor) -> Tensor:
    """Mean Shannon entropy (nats) of the row-wise softmax of `logits`.

    Built from log_softmax so the gradient flows through both the
    probabilities and their logs.
    """
    ls = log_softmax(logits)
    p = exp(ls)
    per_row = sum_axis(mul(p, ls), axis=1)
    return neg(mean_all(per_row))


def kl_to_fixed(p_fixed: np.ndarray, logp_fixed: np.ndarray, logits: Tensor) -> Tensor:
    """Mean KL(p_fixed || softmax(logits)) with p_fixed treated as a constant.

    `logp_fixed` must be the log of `p_fixed` as computed alongside it, so
    that the divergence is exactly zero when `logits` reproduce the same
    distribution bit for bit.
    """
    ls = log_softmax(logits)
    diff = sub(Tensor(p_fixed * logp_fixed), mul(Tensor(p_fixed), ls))
    return mean_all(sum_axis(diff, axis=1))
