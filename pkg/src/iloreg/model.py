"""Encoder, shared decoder and CTC heads assembled for one training regime."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import tensor as T
from .corpus import EOS, SOS, CoarseVocab, Utterance, Vocab, coarse_vocab_view
from .ctc import ctc_loss_batch
from .decoder import DecoderConfig, SharedDecoder
from .encoder import ConformerEncoder, EncoderConfig, EncoderOutput
from .layers import init_linear, linear
from .losses import REGIMES, LossReport, LossWeights, att_ce_loss, combined_loss
from .tensor import ConfigurationError, Tensor


@dataclass
class Batch:
    feats: np.ndarray      # [B, T, D] zero padded
    lengths: np.ndarray    # [B]
    labels: list           # per-utterance label ids (no specials)
    ys_in: np.ndarray      # [B, L+1] sos + labels, eos padded
    ys_out: np.ndarray     # [B, L+1] labels + eos, eos padded
    ys_lengths: np.ndarray  # [B] = L + 1
    uids: list


def make_batch(utts: Sequence[Utterance], dtype=None) -> Batch:
    dtype = dtype or T.get_default_dtype()
    B = len(utts)
    Tmax = max(u.num_frames for u in utts)
    D = utts[0].features.shape[1]
    feats = np.zeros((B, Tmax, D), dtype=dtype)
    Lmax = max(len(u.labels) for u in utts) + 1
    ys_in = np.full((B, Lmax), EOS, dtype=np.int64)
    ys_out = np.full((B, Lmax), EOS, dtype=np.int64)
    for b, u in enumerate(utts):
        feats[b, : u.num_frames] = u.features
        ys_in[b, 0] = SOS
        ys_in[b, 1: len(u.labels) + 1] = u.labels
        ys_out[b, : len(u.labels)] = u.labels
    return Batch(feats, np.array([u.num_frames for u in utts]), [list(u.labels) for u in utts],
                 ys_in, ys_out, np.array([len(u.labels) + 1 for u in utts]), [u.uid for u in utts])


class ILOModel:
    """Conformer encoder + shared attention decoder + CTC head.

    ``regime`` decides what the intermediate tap feeds during training:

    * ``baseline``: nothing, no tap.
    * ``proposed``: the shared decoder (adds no parameters).
    * ``ilo_ctc``: a dedicated linear CTC head over ``inter_vocab_size`` units.

    Parameters other than the intermediate CTC head are drawn from the same
    stream regardless of regime, so models built with one seed share them.
    """

    def __init__(self, enc_cfg: EncoderConfig, dec_cfg: DecoderConfig, regime: str = "baseline",
                 seed: int = 0, dtype=None, inter_vocab: Optional[CoarseVocab] = None):
        if regime not in REGIMES:
            raise ConfigurationError(f"unknown regime {regime!r}; expected one of {REGIMES}")
        if enc_cfg.d_model != dec_cfg.d_model:
            raise ConfigurationError(
                f"encoder d_model {enc_cfg.d_model} differs from decoder d_model {dec_cfg.d_model}")
        if regime == "baseline" and enc_cfg.ilo_layer is not None:
            enc_cfg = EncoderConfig(**{**enc_cfg.__dict__, "ilo_layer": None})
        if regime != "baseline" and enc_cfg.ilo_layer is None:
            raise ConfigurationError(f"regime {regime!r} needs encoder.ilo_layer")
        self.regime = regime
        self.dtype = dtype or T.get_default_dtype()
        rng = np.random.default_rng(seed)
        self.encoder = ConformerEncoder(enc_cfg, rng, self.dtype)
        self.decoder = SharedDecoder(dec_cfg, rng, self.dtype)
        self.vocab = Vocab(dec_cfg.vocab_size - 3)
        self.head: dict[str, Tensor] = {}
        init_linear(self.head, "ctc", enc_cfg.d_model, dec_cfg.vocab_size, rng, self.dtype)
        self.inter_vocab = inter_vocab
        if regime == "ilo_ctc":
            size = dec_cfg.vocab_size if inter_vocab is None else inter_vocab.size
            init_linear(self.head, "ilo_ctc", enc_cfg.d_model, size,
                        np.random.default_rng([seed, 1]), self.dtype)

    # -- parameters -----------------------------------------------------------
    @property
    def enc_cfg(self) -> EncoderConfig:
        return self.encoder.cfg

    @property
    def dec_cfg(self) -> DecoderConfig:
        return self.decoder.cfg

    def named_parameters(self) -> dict[str, Tensor]:
        out = {f"encoder.{k}": v for k, v in self.encoder.params.items()}
        out.update({f"decoder.{k}": v for k, v in self.decoder.params.items()})
        out.update({f"head.{k}": v for k, v in self.head.items()})
        return out

    def num_parameters(self) -> int:
        return sum(t.size for t in self.named_parameters().values())

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.named_parameters().items()}

    def load_state_dict(self, state: dict, strict: bool = True) -> None:
        params = self.named_parameters()
        if strict:
            missing = set(params) - set(state)
            if missing:
                raise KeyError(f"state is missing parameters: {sorted(missing)[:5]}")
        for k, p in params.items():
            if k in state:
                arr = np.asarray(state[k])
                if arr.shape != p.shape:
                    raise ConfigurationError(f"{k}: shape {arr.shape} != {p.shape}")
                p.data[...] = arr

    def zero_grad(self) -> None:
        for p in self.named_parameters().values():
            p.zero_grad()

    # -- forward pieces -------------------------------------------------------
    def encode(self, feats, lengths=None, training: bool = False) -> EncoderOutput:
        return self.encoder.forward(feats, lengths, training)

    def ctc_log_probs(self, memory: Tensor) -> Tensor:
        return T.log_softmax(linear(memory, self.head, "ctc"), axis=-1)

    def inter_ctc_log_probs(self, ilo_memory: Tensor) -> Tensor:
        return T.log_softmax(linear(ilo_memory, self.head, "ilo_ctc"), axis=-1)

    def decoder_logits(self, memory: Tensor, mem_lengths, ys_in, training: bool = False) -> Tensor:
        return self.decoder.forward(memory, mem_lengths, ys_in, training)

    def inter_labels(self, labels: Sequence[int]) -> list[int]:
        return list(labels) if self.inter_vocab is None else coarse_vocab_view(labels, self.inter_vocab)

    def loss(self, batch: Batch, weights: LossWeights, training: bool = True,
             smoothing: float = 0.1) -> tuple[Tensor, LossReport]:
        """Regime-specific composite loss on one batch (call under a Tape to train)."""
        out = self.encode(Tensor(batch.feats, dtype=self.dtype), batch.lengths, training)
        mem_len = out.lengths
        l_ctc = ctc_loss_batch(self.ctc_log_probs(out.final_memory), mem_len, batch.labels)
        logits = self.decoder_logits(out.final_memory, mem_len, batch.ys_in, training)
        l_att = att_ce_loss(logits, batch.ys_out, smoothing, batch.ys_lengths)
        l_inter = None
        if self.regime == "proposed":
            # same decoder object, same targets, fresh dropout masks
            logits_i = self.decoder_logits(out.ilo_memory, mem_len, batch.ys_in, training)
            l_inter = att_ce_loss(logits_i, batch.ys_out, smoothing, batch.ys_lengths)
        elif self.regime == "ilo_ctc":
            l_inter = ctc_loss_batch(self.inter_ctc_log_probs(out.ilo_memory), mem_len,
                                     [self.inter_labels(l) for l in batch.labels])
        total = combined_loss(self.regime, weights, l_ctc, l_att, l_inter)
        report = LossReport(
            self.regime, float(l_ctc.data), float(l_att.data), float(total.data),
            l_att_inter=float(l_inter.data) if self.regime == "proposed" else None,
            l_ctc_inter=float(l_inter.data) if self.regime == "ilo_ctc" else None,
        )
        return total, report


def build_model(enc_cfg: EncoderConfig, dec_cfg: DecoderConfig, regime: str, seed: int = 0,
                dtype=None, inter_units: str = "fine") -> ILOModel:
    inter_vocab = None
    if regime == "ilo_ctc" and inter_units == "coarse":
        inter_vocab = CoarseVocab.all_pairs(Vocab(dec_cfg.vocab_size - 3))
    elif inter_units not in ("fine", "coarse"):
        raise ConfigurationError(f"inter_units must be 'fine' or 'coarse', got {inter_units!r}")
    return ILOModel(enc_cfg, dec_cfg, regime, seed, dtype, inter_vocab)
