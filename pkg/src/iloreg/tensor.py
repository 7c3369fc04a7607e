"""Minimal dense tensor with tape-based reverse-mode differentiation.

Tensors wrap a numpy array. Every primitive called while a :class:`Tape` is
active, with at least one input that requires a gradient, appends a node to
that tape. Because nodes are appended in execution order the record is
already topologically sorted, so :func:`backward` simply walks it in reverse.

Example::

    x = Tensor(np.array(3.0), requires_grad=True)
    with Tape():
        y = x * x
        backward(y)
    x.grad  # 6.0
"""
from __future__ import annotations

import contextvars
from contextlib import contextmanager
from typing import Callable, Optional, Sequence

import numpy as np

__all__ = [
    "Tensor", "Tape", "DimensionError", "ConfigurationError", "ContractError",
    "backward", "current_tape", "no_grad", "set_default_dtype", "get_default_dtype",
    "tensor", "matmul", "softmax", "log_softmax", "layer_norm", "depthwise_conv1d",
    "sigmoid", "swish", "relu", "glu", "dropout", "embedding", "concat", "record",
]


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class ConfigurationError(ValueError):
    """A configuration value is outside its valid range."""


class ContractError(ValueError):
    """A call violated an operation's precondition."""


_DEFAULT_DTYPE = np.float32
_active_tape: contextvars.ContextVar[Optional["Tape"]] = contextvars.ContextVar(
    "iloreg_active_tape", default=None)
_grad_enabled: contextvars.ContextVar[bool] = contextvars.ContextVar(
    "iloreg_grad_enabled", default=True)


def set_default_dtype(dtype) -> None:
    """Select float32 (training) or float64 (gradient checks) for new tensors."""
    global _DEFAULT_DTYPE
    dtype = np.dtype(dtype).type
    if dtype not in (np.float32, np.float64):
        raise ConfigurationError(f"unsupported dtype {dtype}")
    _DEFAULT_DTYPE = dtype


def get_default_dtype():
    return _DEFAULT_DTYPE


def current_tape() -> Optional["Tape"]:
    return _active_tape.get()


@contextmanager
def no_grad():
    token = _grad_enabled.set(False)
    try:
        yield
    finally:
        _grad_enabled.reset(token)


class Tensor:
    """A float array that may carry a gradient buffer."""

    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str | None = None):
        if isinstance(data, Tensor):
            data = data.data
        if dtype is None:
            dtype = data.dtype if isinstance(data, np.ndarray) and data.dtype.kind == "f" else _DEFAULT_DTYPE
        arr = np.asarray(data, dtype=dtype)
        self.data = arr if arr.flags.c_contiguous else np.ascontiguousarray(arr)
        self.requires_grad = requires_grad
        self.name = name
        self.node_id: Optional[int] = None
        self._grad: Optional[np.ndarray] = None
        self._tape: Optional[Tape] = None

    # -- metadata ---------------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def grad(self) -> Optional[np.ndarray]:
        # Differentiable tensors that no path reached report a zero gradient.
        if self._grad is None and self.requires_grad:
            return np.zeros_like(self.data)
        return self._grad

    @grad.setter
    def grad(self, value) -> None:
        self._grad = None if value is None else np.asarray(value, dtype=self.data.dtype)

    def zero_grad(self) -> None:
        self._grad = None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data, dtype=self.data.dtype)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype.name}, requires_grad={self.requires_grad})"

    def __len__(self) -> int:
        return self.shape[0]

    # -- operators --------------------------------------------------------
    def __add__(self, other):
        return _add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return _add(self, _neg(_as_tensor(other, self.dtype)))

    def __rsub__(self, other):
        return _add(_as_tensor(other, self.dtype), _neg(self))

    def __neg__(self):
        return _neg(self)

    def __mul__(self, other):
        return _mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division by a tensor is not supported")
        return _mul(self, 1.0 / other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return _getitem(self, index)

    def sum(self, axis=None, keepdims: bool = False):
        return _sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        n = self.size if axis is None else int(np.prod([self.shape[a] for a in np.atleast_1d(axis)]))
        return _sum(self, axis, keepdims) * (1.0 / n)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return _reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return _transpose(self, axes or None)

    def swapaxes(self, a: int, b: int):
        axes = list(range(self.ndim))
        axes[a], axes[b] = axes[b], axes[a]
        return _transpose(self, tuple(axes))

    def exp(self):
        return _exp(self)

    def log(self):
        return _log(self)


class Tape:
    """Ordered record of primitive operations plus the seeded generator used
    for stochastic ops (dropout, masking) during the recorded pass."""

    def __init__(self, seed: int = 0):
        self.rng_seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self.rng = np.random.default_rng(self.rng_seed)
        self.nodes: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []
        self._token = None

    def __enter__(self) -> "Tape":
        self._token = _active_tape.set(self)
        return self

    def __exit__(self, *exc) -> None:
        _active_tape.reset(self._token)
        self._token = None

    def __len__(self) -> int:
        return len(self.nodes)

    def record(self, out: Tensor, parents: Sequence[Tensor], backward_fn: Callable) -> None:
        out.requires_grad = True
        out.node_id = len(self.nodes)
        out._tape = self
        self.nodes.append((out, tuple(parents), backward_fn))

    def backward(self, loss: Tensor) -> None:
        if loss.size != 1:
            raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
        loss._grad = np.ones_like(loss.data)
        stop = loss.node_id + 1 if loss._tape is self else 0
        for out, parents, fn in reversed(self.nodes[:stop]):
            if out._grad is None:
                continue
            grads = fn(out._grad)
            for p, g in zip(parents, grads):
                if g is None or not p.requires_grad:
                    continue
                if p._grad is None:
                    p._grad = np.array(g, dtype=p.data.dtype, copy=True).reshape(p.shape)
                else:
                    p._grad += g


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(t) into ``t.grad`` for every tensor upstream of ``loss``."""
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss._tape is None:
        if loss.requires_grad:
            loss.grad = np.ones_like(loss.data)
        return
    loss._tape.backward(loss)


def record(data: np.ndarray, parents: Sequence[Tensor], backward_fn: Callable) -> Tensor:
    """Wrap ``data`` as the output of a primitive.

    ``backward_fn(grad_out)`` must return one gradient (or None) per parent.
    The node is recorded only when a tape is active, gradients are enabled and
    some parent requires a gradient.
    """
    out = Tensor(data, dtype=data.dtype)
    tape = _active_tape.get()
    if tape is not None and _grad_enabled.get() and any(p.requires_grad for p in parents):
        tape.record(out, parents, backward_fn)
    return out


def tensor(data, requires_grad: bool = False, dtype=None) -> Tensor:
    return Tensor(np.asarray(data), requires_grad=requires_grad, dtype=dtype or _DEFAULT_DTYPE)


def _as_tensor(x, dtype) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype), dtype=dtype)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and grad.shape[i] != 1:
            grad = grad.sum(axis=i, keepdims=True)
    return grad


# -- elementwise ------------------------------------------------------------

def _add(a, b) -> Tensor:
    if not isinstance(a, Tensor):
        a, b = b, a
    b = _as_tensor(b, a.dtype)
    sa, sb = a.shape, b.shape
    return record(a.data + b.data, (a, b),
                  lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def _neg(a: Tensor) -> Tensor:
    return record(-a.data, (a,), lambda g: (-g,))


def _mul(a, b) -> Tensor:
    if not isinstance(a, Tensor):
        a, b = b, a
    if not isinstance(b, Tensor):
        c = np.asarray(b, dtype=a.dtype)
        return record(a.data * c, (a,), lambda g: (_unbroadcast(g * c, a.shape),))
    return record(a.data * b.data, (a, b),
                  lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def _exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return record(out, (a,), lambda g: (g * out,))


def _log(a: Tensor) -> Tensor:
    return record(np.log(a.data), (a,), lambda g: (g / a.data,))


def sigmoid(x: Tensor) -> Tensor:
    s = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    return record(s, (x,), lambda g: (g * s * (1.0 - s),))


def swish(x: Tensor) -> Tensor:
    """x * sigmoid(x)"""
    s = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    out = x.data * s
    return record(out, (x,), lambda g: (g * (s + out * (1.0 - s)),))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return record(x.data * mask, (x,), lambda g: (g * mask,))


def glu(x: Tensor, axis: int = -1) -> Tensor:
    """Gated linear unit: first half * sigmoid(second half) along ``axis``."""
    a, b = np.split(x.data, 2, axis=axis)
    s = 0.5 * (1.0 + np.tanh(0.5 * b))
    out = a * s

    def fn(g):
        return (np.concatenate([g * s, g * a * s * (1.0 - s)], axis=axis),)
    return record(out, (x,), fn)


# -- shape ops --------------------------------------------------------------

def _sum(a: Tensor, axis, keepdims: bool) -> Tensor:
    out = np.sum(a.data, axis=axis, keepdims=keepdims)
    shape = a.shape

    def fn(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape),)
    return record(np.asarray(out), (a,), fn)


def _reshape(a: Tensor, shape) -> Tensor:
    old = a.shape
    return record(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def _transpose(a: Tensor, axes) -> Tensor:
    inv = None if axes is None else tuple(np.argsort(axes))
    return record(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),))


def _getitem(a: Tensor, index) -> Tensor:
    shape = a.shape

    def fn(g):
        full = np.zeros(shape, dtype=g.dtype)
        np.add.at(full, index, g)
        return (full,)
    return record(np.array(a.data[index]), (a,), fn)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    sizes = [t.shape[axis] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    return record(out, tuple(tensors), lambda g: tuple(np.split(g, cuts, axis=axis)))


def embedding(table: Tensor, ids) -> Tensor:
    """Row lookup ``table[ids]``; gradients scatter-add back into the table."""
    ids = np.asarray(ids, dtype=np.int64)

    def fn(g):
        full = np.zeros_like(table.data)
        np.add.at(full, ids.reshape(-1), g.reshape(-1, table.shape[-1]))
        return (full,)
    return record(table.data[ids], (table,), fn)


# -- linear algebra -----------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes; leading axes broadcast."""
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data

    def fn(g):
        if bd.ndim == 2 and ad.ndim > 2:
            gb = ad.reshape(-1, ad.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        else:
            gb = _unbroadcast(np.matmul(np.swapaxes(ad, -1, -2), g), bd.shape)
        ga = _unbroadcast(np.matmul(g, np.swapaxes(bd, -1, -2)), ad.shape)
        return ga, gb
    return record(np.matmul(ad, bd), (a, b), fn)


# -- normalisation ------------------------------------------------------------

def softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axis, keepdims=True)

    def fn(g):
        return (s * (g - (g * s).sum(axis=axis, keepdims=True)),)
    return record(s, (x,), fn)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse

    def fn(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)
    return record(out, (x,), fn)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalise the last axis to zero mean / unit variance, then apply ``gain`` and ``bias``."""
    if eps <= 0:
        raise ConfigurationError("layer_norm eps must be positive")
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gain.data + bias.data
    def fn(g):
        gh = g * gain.data
        gx = inv * (gh - gh.mean(axis=-1, keepdims=True)
                    - xhat * (gh * xhat).mean(axis=-1, keepdims=True))
        lead = tuple(range(g.ndim - 1))
        return gx, (g * xhat).sum(axis=lead), g.sum(axis=lead)
    return record(out, (x, gain, bias), fn)


# -- convolution --------------------------------------------------------------

def depthwise_conv1d(x: Tensor, kernel: Tensor) -> Tensor:
    """Per-channel 1-d correlation with "same" zero padding.

    ``x`` is ``[..., T, d]`` and ``kernel`` is ``[k, d]`` with odd ``k``.
    """
    k, d = kernel.shape
    if k % 2 == 0:
        raise ConfigurationError(f"depthwise_conv1d kernel width must be odd, got {k}")
    if x.shape[-1] != d:
        raise DimensionError(f"depthwise_conv1d channels differ: {x.shape} vs kernel {kernel.shape}")
    half = k // 2
    T = x.shape[-2]
    pad = [(0, 0)] * (x.ndim - 2) + [(half, half), (0, 0)]
    xp = np.pad(x.data, pad)
    w = kernel.data
    out = np.zeros_like(x.data)
    for j in range(k):
        out += xp[..., j:j + T, :] * w[j]

    def fn(g):
        gp = np.zeros_like(xp)
        gk = np.empty_like(w)
        lead = tuple(range(g.ndim - 1))
        for j in range(k):
            gp[..., j:j + T, :] += g * w[j]
            gk[j] = (g * xp[..., j:j + T, :]).sum(axis=lead)
        return gp[..., half:half + T, :], gk
    return record(out, (x, kernel), fn)


# -- stochastic -----------------------------------------------------------------

def dropout(x: Tensor, p: float, training: bool, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout. The mask comes from ``rng`` or else the active tape's generator."""
    if not 0.0 <= p < 1.0:
        raise ConfigurationError(f"dropout probability must be in [0, 1), got {p}")
    if not training or p == 0.0:
        return x
    if rng is None:
        tape = _active_tape.get()
        if tape is None:
            raise ContractError("training-mode dropout needs an rng or an active tape")
        rng = tape.rng
    mask = (rng.random(x.shape) >= p).astype(x.dtype) / (1.0 - p)
    return record(x.data * mask, (x,), lambda g: (g * mask,))
