"""Minimal reverse-mode automatic differentiation over numpy arrays.

A ``Tensor`` wraps an ndarray and records, per operation, a closure that
propagates the output gradient back to its parents. The op set is exactly
what the models here need: broadcasting arithmetic, batched matmul, shape
ops, reductions, gelu, and a masked softmax whose masked entries receive an
attention weight of exactly zero (so masked tokens cannot leak into either
the forward values or the gradients).

Graph recording is skipped entirely inside ``no_grad()`` or when no input
requires gradients, which keeps sampling loops allocation-light.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Mapping

import numpy as np
from scipy.special import erf

_GRAD_ENABLED = True

_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT2PI = 1.0 / np.sqrt(2.0 * np.pi)


class NonFiniteLossError(FloatingPointError):
    """Raised when a loss evaluates to NaN or infinity."""


@contextlib.contextmanager
def no_grad():
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = data if isinstance(data, np.ndarray) else np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None

    # -- construction helpers -------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # -- graph plumbing -------------------------------------------------------

    def _accumulate(self, g: np.ndarray) -> None:
        # Incoming buffers are never mutated downstream, so aliasing is safe
        # on first touch; later touches allocate a fresh sum.
        if self.grad is None:
            self.grad = g if isinstance(g, np.ndarray) else np.asarray(g)
        else:
            self.grad = self.grad + g

    def backward(self, seed: np.ndarray | float = 1.0) -> None:
        """Reverse-mode sweep from this (scalar) tensor."""
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar tensor")
        topo: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in visited:
                    stack.append((p, False))
        self._accumulate(np.asarray(seed, dtype=self.data.dtype).reshape(self.data.shape))
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- operators ------------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __neg__(self):
        return mul(self, -1.0)

    def __sub__(self, other):
        return add(self, -as_tensor(other))

    def __rsub__(self, other):
        return add(as_tensor(other), -self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return take(self, idx)

    def sum(self, axis=None, keepdims=False):
        return reduce_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return reduce_mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def swapaxes(self, a, b):
        return swapaxes(self, a, b)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(data) -> Tensor:
    return Tensor(np.asarray(data), requires_grad=True)


def _make(data: np.ndarray, parents: Iterable[Tensor], backward) -> Tensor:
    parents = tuple(parents)
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum gradient over axes that were broadcast in the forward pass."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, s) in enumerate(zip(g.shape, shape)) if s == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# -- arithmetic ---------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    data = a.data + b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.data.shape))

    return _make(data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    data = a.data * b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.data.shape))

    return _make(data, (a, b), backward)


def power(a, exponent: float) -> Tensor:
    a = as_tensor(a)
    exponent = float(exponent)
    data = a.data**exponent

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * exponent * a.data ** (exponent - 1.0))

    return _make(data, (a,), backward)


def exp(a) -> Tensor:
    a = as_tensor(a)
    data = np.exp(a.data)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * data)

    return _make(data, (a,), backward)


def tanh(a) -> Tensor:
    a = as_tensor(a)
    data = np.tanh(a.data)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * (1.0 - data * data))

    return _make(data, (a,), backward)


def gelu(a) -> Tensor:
    """Exact gaussian-error-linear unit: x * Phi(x)."""
    a = as_tensor(a)
    x = a.data
    phi = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    data = x * phi
    cache: list = []

    def backward(g):
        if a.requires_grad:
            if not cache:
                cache.append(phi + x * (_INV_SQRT2PI * np.exp(-0.5 * x * x)))
            a._accumulate(g * cache[0])

    return _make(data, (a,), backward)


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError("matmul operands must have ndim >= 2")

    if b.ndim == 2 and a.ndim > 2:
        # Batched activations against a shared weight matrix: collapse the
        # batch into one large GEMM instead of looping small ones.
        lead = a.data.shape[:-1]
        a2 = np.ascontiguousarray(a.data).reshape(-1, a.data.shape[-1])
        data = (a2 @ b.data).reshape(lead + (b.data.shape[1],))

        def backward(g):
            g2 = np.ascontiguousarray(g).reshape(-1, b.data.shape[1])
            if a.requires_grad:
                a._accumulate((g2 @ b.data.T).reshape(a.data.shape))
            if b.requires_grad:
                b._accumulate(a2.T @ g2)

        return _make(data, (a, b), backward)

    data = a.data @ b.data

    def backward(g):
        if a.requires_grad:
            ga = g @ b.data.swapaxes(-1, -2)
            a._accumulate(_unbroadcast(ga, a.data.shape))
        if b.requires_grad:
            gb = a.data.swapaxes(-1, -2) @ g
            b._accumulate(_unbroadcast(gb, b.data.shape))

    return _make(data, (a, b), backward)


# -- reductions and shape ops ---------------------------------------------------


def reduce_sum(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if not a.requires_grad:
            return
        if axis is None:
            a._accumulate(np.broadcast_to(g, a.data.shape))
            return
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        gg = g
        if not keepdims:
            gg = np.expand_dims(g, axes)
        a._accumulate(np.broadcast_to(gg, a.data.shape))

    return _make(data, (a,), backward)


def reduce_mean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    count = a.data.size if axis is None else np.prod(
        [a.data.shape[ax] for ax in ((axis,) if isinstance(axis, int) else axis)]
    )
    return mul(reduce_sum(a, axis=axis, keepdims=keepdims), 1.0 / float(count))


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    data = a.data.reshape(shape)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g.reshape(a.data.shape))

    return _make(data, (a,), backward)


def swapaxes(a, i: int, j: int) -> Tensor:
    a = as_tensor(a)
    data = a.data.swapaxes(i, j)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g.swapaxes(i, j))

    return _make(data, (a,), backward)


def take(a, idx) -> Tensor:
    """Basic (slice/integer) indexing; backward scatters into a zero buffer."""
    a = as_tensor(a)
    data = a.data[idx]

    def backward(g):
        if a.requires_grad:
            buf = np.zeros_like(a.data)
            buf[idx] += g
            a._accumulate(buf)

    return _make(data, (a,), backward)


def concat(tensors: list[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(int(lo), int(hi))
                t._accumulate(g[tuple(sl)])

    return _make(data, tensors, backward)


def masked_softmax(logits, mask: np.ndarray) -> Tensor:
    """Softmax over the last axis with hard masking.

    Masked positions contribute an exact zero weight: they are set to -inf
    before the (stable) softmax, so neither forward values nor gradients can
    flow through them. Every row must keep at least one allowed position.
    """
    logits = as_tensor(logits)
    mask = np.broadcast_to(np.asarray(mask, dtype=bool), logits.data.shape)
    if not mask.any(axis=-1).all():
        raise ValueError("masked_softmax: some row has no allowed positions")
    z = np.where(mask, logits.data, -np.inf)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        if logits.requires_grad:
            inner = (g * y).sum(axis=-1, keepdims=True)
            logits._accumulate(y * (g - inner))

    return _make(y, (logits,), backward)


# -- gradient API ---------------------------------------------------------------


def value_and_grad(
    loss_fn: Callable[[Mapping[str, Tensor]], Tensor], params: Mapping[str, Tensor]
) -> tuple[float, dict[str, np.ndarray]]:
    """Evaluate a scalar loss and return exact reverse-mode gradients for
    every parameter. Raises NonFiniteLossError on NaN/inf losses."""
    for p in params.values():
        p.grad = None
    loss = loss_fn(params)
    if not isinstance(loss, Tensor) or loss.data.size != 1:
        raise ValueError("loss_fn must return a scalar Tensor")
    value = float(loss.data)
    if not np.isfinite(value):
        raise NonFiniteLossError(f"loss is not finite: {value}")
    loss.backward()
    return value, {
        k: (p.grad if p.grad is not None else np.zeros_like(p.data)) for k, p in params.items()
    }


def grad(
    loss_fn: Callable[[Mapping[str, Tensor]], Tensor], params: Mapping[str, Tensor]
) -> dict[str, np.ndarray]:
    return value_and_grad(loss_fn, params)[1]
