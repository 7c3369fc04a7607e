"""Parameter initialisation and the sub-blocks shared by encoder and decoder."""
from __future__ import annotations

import math
from typing import Mapping, MutableMapping

import numpy as np

from . import tensor as T
from .tensor import Tensor

NEG_MASK = -1e9


def init_linear(params: MutableMapping[str, Tensor], name: str, n_in: int, n_out: int,
                rng: np.random.Generator, dtype, bias: bool = True) -> None:
    limit = math.sqrt(6.0 / (n_in + n_out))
    params[f"{name}.w"] = Tensor(rng.uniform(-limit, limit, (n_in, n_out)).astype(dtype), requires_grad=True)
    if bias:
        params[f"{name}.b"] = Tensor(np.zeros(n_out, dtype=dtype), requires_grad=True)


def init_norm(params: MutableMapping[str, Tensor], name: str, dim: int, dtype) -> None:
    params[f"{name}.g"] = Tensor(np.ones(dim, dtype=dtype), requires_grad=True)
    params[f"{name}.b"] = Tensor(np.zeros(dim, dtype=dtype), requires_grad=True)


def linear(x: Tensor, p: Mapping[str, Tensor], name: str) -> Tensor:
    y = x @ p[f"{name}.w"]
    b = p.get(f"{name}.b")
    return y if b is None else y + b


def norm(x: Tensor, p: Mapping[str, Tensor], name: str) -> Tensor:
    return T.layer_norm(x, p[f"{name}.g"], p[f"{name}.b"])


def sinusoidal_positions(length: int, dim: int, dtype) -> np.ndarray:
    pos = np.arange(length)[:, None]
    rate = np.exp(-math.log(10000.0) * np.arange(0, dim, 2) / dim)
    pe = np.zeros((length, dim))
    pe[:, 0::2] = np.sin(pos * rate)
    pe[:, 1::2] = np.cos(pos * rate[: dim // 2])
    return pe.astype(dtype)


def init_ffn(params, name: str, d: int, hidden: int, rng, dtype) -> None:
    init_norm(params, f"{name}.ln", d, dtype)
    init_linear(params, f"{name}.fc1", d, hidden, rng, dtype)
    init_linear(params, f"{name}.fc2", hidden, d, rng, dtype)


def feed_forward(x: Tensor, p, name: str, dropout_p: float, training: bool,
                 activation=T.swish) -> Tensor:
    """LayerNorm -> Linear -> activation -> dropout -> Linear -> dropout."""
    h = activation(linear(norm(x, p, f"{name}.ln"), p, f"{name}.fc1"))
    h = T.dropout(h, dropout_p, training)
    return T.dropout(linear(h, p, f"{name}.fc2"), dropout_p, training)


def init_attention(params, name: str, d: int, rng, dtype) -> None:
    for proj in ("q", "k", "v", "o"):
        init_linear(params, f"{name}.{proj}", d, d, rng, dtype)


def attention(query: Tensor, memory: Tensor, p, name: str, num_heads: int,
              mask: np.ndarray | None) -> Tensor:
    """Scaled dot-product multi-head attention.

    ``query`` is ``[B, Tq, d]``, ``memory`` is ``[B, Tk, d]``; ``mask`` is an
    additive array broadcastable to ``[B, H, Tq, Tk]``.
    """
    B, Tq, d = query.shape
    Tk = memory.shape[1]
    dk = d // num_heads

    def heads(x: Tensor, n: int) -> Tensor:
        return x.reshape(B, n, num_heads, dk).transpose(0, 2, 1, 3)

    q = heads(linear(query, p, f"{name}.q"), Tq)
    k = heads(linear(memory, p, f"{name}.k"), Tk)
    v = heads(linear(memory, p, f"{name}.v"), Tk)
    scores = (q @ k.swapaxes(-1, -2)) * (1.0 / math.sqrt(dk))
    if mask is not None:
        scores = scores + mask.astype(scores.dtype)
    ctx = T.softmax(scores, axis=-1) @ v
    ctx = ctx.transpose(0, 2, 1, 3).reshape(B, Tq, d)
    return linear(ctx, p, f"{name}.o")


def key_padding_mask(lengths, max_len: int) -> np.ndarray:
    """Additive ``[B, 1, 1, T]`` mask hiding frames at or beyond each length."""
    valid = np.arange(max_len)[None, :] < np.asarray(lengths)[:, None]
    return np.where(valid, 0.0, NEG_MASK)[:, None, None, :]


def causal_mask(length: int) -> np.ndarray:
    return np.triu(np.full((length, length), NEG_MASK), k=1)
