"""Conformer-style encoder with a single read-only intermediate-layer tap.

Each layer computes, in order::

    x1 = x  + FFN(x) / 2
    x2 = x1 + MHSA(x1)
    x3 = x2 + Conv(x2)
    y  = LayerNorm(x3) + FFN(x3) / 2

The last line is the default (``final_norm="split"``). ``final_norm="wrap"``
selects the usual Conformer ordering ``LayerNorm(x3 + FFN(x3) / 2)``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import tensor as T
from .layers import (attention, feed_forward, init_attention, init_ffn, init_linear, init_norm,
                     key_padding_mask, linear, norm, sinusoidal_positions)
from .tensor import ConfigurationError, DimensionError, Tensor


class InputTooShortError(ValueError):
    """The utterance has fewer frames than the frontend's receptive field."""


@dataclass
class EncoderConfig:
    num_layers: int = 6
    d_model: int = 32
    num_heads: int = 2
    ffn_dim: int = 64
    conv_kernel: int = 7
    dropout_p: float = 0.1
    ilo_layer: Optional[int] = None
    subsample_factor: int = 4
    feat_dim: int = 16
    final_norm: str = "split"

    def validate(self) -> None:
        if self.num_layers < 1:
            raise ConfigurationError(f"encoder.num_layers must be positive, got {self.num_layers}")
        if self.d_model < 1 or self.ffn_dim < 1 or self.feat_dim < 1:
            raise ConfigurationError("encoder dimensions must be positive")
        if self.num_heads < 1 or self.d_model % self.num_heads:
            raise ConfigurationError(
                f"encoder.num_heads={self.num_heads} must divide d_model={self.d_model}")
        if self.conv_kernel < 1 or self.conv_kernel % 2 == 0:
            raise ConfigurationError(f"encoder.conv_kernel must be odd, got {self.conv_kernel}")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ConfigurationError(f"encoder.dropout_p must be in [0, 1), got {self.dropout_p}")
        if self.subsample_factor < 1:
            raise ConfigurationError("encoder.subsample_factor must be positive")
        if self.ilo_layer is not None and not 1 <= self.ilo_layer < self.num_layers:
            raise ConfigurationError(
                f"encoder.ilo_layer must satisfy 1 <= i < {self.num_layers}, got {self.ilo_layer}")
        if self.final_norm not in ("split", "wrap"):
            raise ConfigurationError(f"encoder.final_norm must be 'split' or 'wrap', got {self.final_norm!r}")


@dataclass
class EncoderLayerState:
    """Activations of one layer: input, after FFN, after MHSA, after Conv, output."""
    x: Tensor
    x_ffn: Tensor
    x_mhsa: Tensor
    x_conv: Tensor
    y: Tensor


# Incremented on every read of EncoderOutput.ilo_memory. Decoding must leave it unchanged.
ilo_access_count = 0


def reset_ilo_access_count() -> None:
    global ilo_access_count
    ilo_access_count = 0


class EncoderOutput:
    """Final-layer memory plus the optional intermediate-layer memory."""

    def __init__(self, final_memory: Tensor, lengths: np.ndarray,
                 ilo_memory: Optional[Tensor] = None, states: Optional[list] = None):
        self.final_memory = final_memory
        self.lengths = lengths
        self._ilo_memory = ilo_memory
        self.states = states or []

    @property
    def has_ilo(self) -> bool:
        return self._ilo_memory is not None

    @property
    def ilo_memory(self) -> Optional[Tensor]:
        global ilo_access_count
        ilo_access_count += 1
        return self._ilo_memory

    @property
    def frame_count(self) -> int:
        return self.final_memory.shape[-2]


class ConformerEncoder:
    def __init__(self, cfg: EncoderConfig, rng: np.random.Generator, dtype=None):
        cfg.validate()
        self.cfg = cfg
        dtype = dtype or T.get_default_dtype()
        d = cfg.d_model
        p: dict[str, Tensor] = {}
        init_linear(p, "frontend", cfg.feat_dim * cfg.subsample_factor, d, rng, dtype)
        for i in range(1, cfg.num_layers + 1):
            pre = f"layers.{i}"
            init_ffn(p, f"{pre}.ffn1", d, cfg.ffn_dim, rng, dtype)
            init_norm(p, f"{pre}.mhsa.ln", d, dtype)
            init_attention(p, f"{pre}.mhsa.att", d, rng, dtype)
            init_norm(p, f"{pre}.conv.ln", d, dtype)
            init_linear(p, f"{pre}.conv.pw1", d, 2 * d, rng, dtype)
            lim = np.sqrt(3.0 / cfg.conv_kernel)
            p[f"{pre}.conv.dw"] = Tensor(rng.uniform(-lim, lim, (cfg.conv_kernel, d)).astype(dtype),
                                         requires_grad=True)
            init_norm(p, f"{pre}.conv.dw_ln", d, dtype)
            init_linear(p, f"{pre}.conv.pw2", d, d, rng, dtype)
            init_ffn(p, f"{pre}.ffn2", d, cfg.ffn_dim, rng, dtype)
            init_norm(p, f"{pre}.out_ln", d, dtype)
        self.params = p

    # -- frontend -----------------------------------------------------------
    def subsample_frontend(self, feats: Tensor, lengths, training: bool = False):
        """Stack non-overlapping groups of ``subsample_factor`` frames and project
        them to ``d_model``. ``feats`` is ``[B, T, D]``; returns
        ``([B, T', d_model], lengths')`` with ``T' = T // factor``."""
        f = self.cfg.subsample_factor
        B, Tn, D = feats.shape
        if D != self.cfg.feat_dim:
            raise DimensionError(f"features have {D} channels, encoder expects {self.cfg.feat_dim}")
        lengths = np.asarray(lengths)
        if Tn < f or lengths.min() < f:
            raise InputTooShortError(
                f"utterance of {int(lengths.min())} frames is shorter than the frontend receptive field {f}")
        Tp = Tn // f
        x = (feats[:, : Tp * f, :] if Tp * f != Tn else feats).reshape(B, Tp, f * D)
        x = linear(x, self.params, "frontend")
        x = x + sinusoidal_positions(Tp, self.cfg.d_model, x.dtype)
        return T.dropout(x, self.cfg.dropout_p, training), lengths // f

    # -- one layer ----------------------------------------------------------
    def layer_forward(self, i: int, x: Tensor, mask: Optional[np.ndarray] = None,
                      valid: Optional[np.ndarray] = None, training: bool = False):
        """Apply layer ``i`` (1-based) to ``x`` of shape ``[B, T, d]``."""
        cfg, p = self.cfg, self.params
        if x.shape[-1] != cfg.d_model:
            raise DimensionError(f"layer input has width {x.shape[-1]}, expected {cfg.d_model}")
        pre = f"layers.{i}"
        drop = cfg.dropout_p
        x_ffn = x + feed_forward(x, p, f"{pre}.ffn1", drop, training) * 0.5
        h = norm(x_ffn, p, f"{pre}.mhsa.ln")
        x_mhsa = x_ffn + T.dropout(attention(h, h, p, f"{pre}.mhsa.att", cfg.num_heads, mask), drop, training)
        x_conv = x_mhsa + self._conv(x_mhsa, pre, valid, training)
        if cfg.final_norm == "split":
            y = norm(x_conv, p, f"{pre}.out_ln") + feed_forward(x_conv, p, f"{pre}.ffn2", drop, training) * 0.5
        else:
            y = norm(x_conv + feed_forward(x_conv, p, f"{pre}.ffn2", drop, training) * 0.5, p, f"{pre}.out_ln")
        return y, EncoderLayerState(x, x_ffn, x_mhsa, x_conv, y)

    def _conv(self, x: Tensor, pre: str, valid, training: bool) -> Tensor:
        """Pointwise expand -> GLU -> depthwise conv -> LayerNorm -> swish -> pointwise."""
        p = self.params
        h = T.glu(linear(norm(x, p, f"{pre}.conv.ln"), p, f"{pre}.conv.pw1"))
        if valid is not None:
            h = h * valid  # padded frames must not leak into the convolution window
        h = T.depthwise_conv1d(h, p[f"{pre}.conv.dw"])
        h = T.swish(norm(h, p, f"{pre}.conv.dw_ln"))
        return T.dropout(linear(h, p, f"{pre}.conv.pw2"), self.cfg.dropout_p, training)

    # -- full stack -----------------------------------------------------------
    def forward(self, feats, lengths=None, training: bool = False, keep_states: bool = False) -> EncoderOutput:
        """Frontend then all layers. ``feats`` is ``[T, D]`` or padded ``[B, T, D]``."""
        if not isinstance(feats, Tensor):
            feats = Tensor(np.asarray(feats), dtype=T.get_default_dtype())
        if feats.ndim == 2:
            feats = feats.reshape(1, *feats.shape)
        if lengths is None:
            lengths = np.full(feats.shape[0], feats.shape[1])
        if feats.shape[1] == 0:
            raise InputTooShortError("empty feature sequence")
        x, lens = self.subsample_frontend(feats, lengths, training)
        Tp = x.shape[1]
        mask = key_padding_mask(lens, Tp)
        valid = (np.arange(Tp)[None, :] < lens[:, None])[..., None].astype(x.dtype)
        tap = None
        states = []
        for i in range(1, self.cfg.num_layers + 1):
            x, st = self.layer_forward(i, x, mask, valid, training)
            if keep_states:
                states.append(st)
            if i == self.cfg.ilo_layer:
                tap = x
        return EncoderOutput(x, lens, tap, states)

    def num_parameters(self) -> int:
        return sum(t.size for t in self.params.values())
