"""Autoregressive attention decoder shared by the final-layer and intermediate memories."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import tensor as T
from .layers import (attention, causal_mask, feed_forward, init_attention, init_ffn, init_linear,
                     init_norm, key_padding_mask, linear, norm, sinusoidal_positions)
from .tensor import ConfigurationError, ContractError, DimensionError, Tensor


@dataclass
class DecoderConfig:
    num_layers: int = 2
    d_model: int = 32
    num_heads: int = 2
    ffn_dim: int = 64
    dropout_p: float = 0.1
    vocab_size: int = 15

    def validate(self) -> None:
        if self.num_layers < 1:
            raise ConfigurationError(f"decoder.num_layers must be positive, got {self.num_layers}")
        if self.num_heads < 1 or self.d_model % self.num_heads:
            raise ConfigurationError(
                f"decoder.num_heads={self.num_heads} must divide d_model={self.d_model}")
        if self.vocab_size < 4:
            raise ConfigurationError(f"decoder.vocab_size must cover specials plus labels, got {self.vocab_size}")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ConfigurationError(f"decoder.dropout_p must be in [0, 1), got {self.dropout_p}")


class SharedDecoder:
    """One parameter set; every call to :meth:`forward` reads the same tensors
    whichever encoder memory it is given."""

    def __init__(self, cfg: DecoderConfig, rng: np.random.Generator, dtype=None):
        cfg.validate()
        self.cfg = cfg
        dtype = dtype or T.get_default_dtype()
        d = cfg.d_model
        p: dict[str, Tensor] = {}
        p["embed"] = Tensor(rng.normal(0.0, d ** -0.5, (cfg.vocab_size, d)).astype(dtype), requires_grad=True)
        for i in range(1, cfg.num_layers + 1):
            pre = f"layers.{i}"
            init_norm(p, f"{pre}.self_ln", d, dtype)
            init_attention(p, f"{pre}.self_att", d, rng, dtype)
            init_norm(p, f"{pre}.src_ln", d, dtype)
            init_attention(p, f"{pre}.src_att", d, rng, dtype)
            init_ffn(p, f"{pre}.ffn", d, cfg.ffn_dim, rng, dtype)
        init_norm(p, "out_ln", d, dtype)
        init_linear(p, "out", d, cfg.vocab_size, rng, dtype)
        self.params = p

    def _embed(self, ys: np.ndarray, offset: int = 0) -> Tensor:
        d = self.cfg.d_model
        x = T.embedding(self.params["embed"], ys) * math.sqrt(d)
        pe = sinusoidal_positions(offset + ys.shape[1], d, x.dtype)[offset:]
        return x + pe

    def _layer(self, i: int, x: Tensor, memory: Tensor, self_mask, src_mask, training: bool,
               query: Optional[Tensor] = None) -> Tensor:
        p, cfg = self.params, self.cfg
        pre = f"layers.{i}"
        q = x if query is None else query
        h = norm(x, p, f"{pre}.self_ln")
        hq = h if query is None else norm(q, p, f"{pre}.self_ln")
        q = q + T.dropout(attention(hq, h, p, f"{pre}.self_att", cfg.num_heads, self_mask),
                          cfg.dropout_p, training)
        q = q + T.dropout(attention(norm(q, p, f"{pre}.src_ln"), memory, p, f"{pre}.src_att",
                                    cfg.num_heads, src_mask), cfg.dropout_p, training)
        return q + feed_forward(q, p, f"{pre}.ffn", cfg.dropout_p, training, activation=T.relu)

    def _check_memory(self, memory: Tensor) -> None:
        if memory.shape[-1] != self.cfg.d_model:
            raise DimensionError(
                f"memory width {memory.shape[-1]} does not match decoder d_model {self.cfg.d_model}")

    def forward(self, memory: Tensor, mem_lengths, ys_in, training: bool = False) -> Tensor:
        """Teacher-forced logits ``[B, L, V]`` for sos-prefixed inputs ``ys_in`` ``[B, L]``."""
        self._check_memory(memory)
        ys_in = np.asarray(ys_in, dtype=np.int64)
        L = ys_in.shape[1]
        x = T.dropout(self._embed(ys_in), self.cfg.dropout_p, training)
        self_mask = causal_mask(L)[None, None]
        src_mask = key_padding_mask(mem_lengths, memory.shape[1])
        for i in range(1, self.cfg.num_layers + 1):
            x = self._layer(i, x, memory, self_mask, src_mask, training)
        return linear(norm(x, self.params, "out_ln"), self.params, "out")

    def step(self, memory: Tensor, mem_lengths, prefixes: Sequence[Sequence[int]],
             cache: Optional[list] = None):
        """Next-token log-probabilities for each prefix (all the same length).

        ``cache`` holds each layer's outputs for all but the last prefix
        position, as returned by the previous call. Returns ``(logp [N, V],
        new_cache)``.
        """
        self._check_memory(memory)
        ys = np.asarray(prefixes, dtype=np.int64)
        if ys.ndim != 2 or ys.shape[1] == 0:
            raise ContractError("decoder step needs non-empty prefixes")
        L = ys.shape[1]
        x = self._embed(ys)
        src_mask = key_padding_mask(mem_lengths, memory.shape[1])
        new_cache = []
        for i in range(1, self.cfg.num_layers + 1):
            if cache is None:
                x = self._layer(i, x, memory, causal_mask(L)[None, None], src_mask, False)
            else:
                last = self._layer(i, x, memory, None, src_mask, False, query=x[:, L - 1:L])
                x = T.concat([cache[i - 1], last], axis=1)
            new_cache.append(x)
        logits = linear(norm(x[:, L - 1], self.params, "out_ln"), self.params, "out")
        return T.log_softmax(logits, axis=-1).data, new_cache

    def num_parameters(self) -> int:
        return sum(t.size for t in self.params.values())
