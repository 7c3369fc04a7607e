"""Inference: hybrid CTC/attention beam search, attention-only search, CTC greedy.

Decoding only ever reads the final-layer memory; the intermediate tap used in
training is not part of the inference graph.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from . import tensor as T
from .corpus import BLANK, EOS, SOS, Utterance
from .ctc import CTCPrefixScorer, collapse
from .tensor import ConfigurationError, ContractError

MODES = ("ctc", "attention", "hybrid")


@dataclass
class DecodeConfig:
    mode: str = "hybrid"
    beam_size: int = 10
    ctc_weight: float = 0.2
    att_weight: float = 0.8
    maxlen_ratio: float = 1.0

    def validate(self) -> None:
        if self.mode not in MODES:
            raise ConfigurationError(f"decode.mode must be one of {MODES}, got {self.mode!r}")
        if self.beam_size < 1:
            raise ConfigurationError(f"decode.beam_size must be >= 1, got {self.beam_size}")
        if self.ctc_weight < 0 or self.att_weight < 0 or abs(self.ctc_weight + self.att_weight - 1.0) > 1e-9:
            raise ConfigurationError(
                f"decode.ctc_weight + decode.att_weight must be 1, got {self.ctc_weight} + {self.att_weight}")
        if self.maxlen_ratio <= 0:
            raise ConfigurationError("decode.maxlen_ratio must be positive")


@dataclass
class Hypothesis:
    tokens: tuple            # sos-prefixed
    att_logprob: float
    ctc_prefix_logprob: float
    combined_score: float
    finished: bool = False
    ctc_state: object = None
    cache_index: int = 0

    @property
    def labels(self) -> list[int]:
        body = self.tokens[1:]
        return list(body[:-1] if self.finished else body)

    def sort_key(self):
        return (-self.combined_score, len(self.tokens), self.tokens)


# next-token log-probs for a list of equal-length prefixes plus opaque state
ScoreFn = Callable[[list, Optional[np.ndarray], object], tuple]


def beam_search(score_fn: ScoreFn, labels: Sequence[int], maxlen: int, cfg: DecodeConfig,
                ctc_log_probs: Optional[np.ndarray] = None, sos: int = SOS, eos: int = EOS,
                blank: int = BLANK) -> Hypothesis:
    """Beam search over ``labels`` plus ``eos``.

    Every candidate is scored ``ctc_weight * ctc_prefix + att_weight * att``
    from scratch, so the combined score is never a running approximation.
    Both terms can only fall as a hypothesis grows, which makes it safe to
    stop once the best finished hypothesis beats every active one.
    """
    use_ctc = cfg.ctc_weight > 0
    if use_ctc and ctc_log_probs is None:
        raise ContractError("hybrid scoring needs CTC log-probabilities")
    if use_ctc and np.asarray(ctc_log_probs).shape[0] == 0:
        raise ContractError("empty encoder memory")
    if maxlen < 1:
        raise ContractError(f"maxlen must be positive, got {maxlen}")
    scorer = CTCPrefixScorer(ctc_log_probs, eos=eos, blank=blank) if use_ctc else None
    vocab = np.array(list(labels) + [eos], dtype=np.int64)
    live = [Hypothesis((sos,), 0.0, 0.0, 0.0, ctc_state=scorer.initial_state() if use_ctc else None)]
    finished: list[Hypothesis] = []
    state = None
    for length in range(maxlen + 1):
        att, state = score_fn([h.tokens for h in live], np.array([h.cache_index for h in live]), state)
        cands = []
        for n, h in enumerate(live):
            toks = vocab if length < maxlen else np.array([eos])
            if use_ctc:
                ctc_scores, ctc_states = scorer.extend(h.tokens[1:], h.ctc_state, toks)
            for j, c in enumerate(toks):
                a = h.att_logprob + float(att[n, c])
                p = float(ctc_scores[j]) if use_ctc else 0.0
                score = cfg.ctc_weight * p + cfg.att_weight * a if use_ctc else cfg.att_weight * a
                cands.append(Hypothesis(h.tokens + (int(c),), a, p, score, finished=int(c) == eos,
                                        ctc_state=ctc_states[j] if use_ctc else None, cache_index=n))
        cands.sort(key=Hypothesis.sort_key)
        live = []
        for h in cands[: cfg.beam_size]:
            (finished if h.finished else live).append(h)
        if not live:
            break
        if finished and min(finished, key=Hypothesis.sort_key).combined_score >= live[0].combined_score:
            break
    return min(finished, key=Hypothesis.sort_key)


def ctc_greedy_decode(ctc_log_probs, blank: int = BLANK) -> list[int]:
    """Frame-wise argmax, merge repeats, drop blanks."""
    lp = np.asarray(ctc_log_probs)
    return collapse(lp.argmax(axis=-1).tolist(), blank)


def decoder_score_fn(model, memory, mem_length: int) -> ScoreFn:
    """Adapter from the shared decoder's incremental step to :func:`beam_search`."""
    mem = memory.data  # [1, T', d]

    def fn(prefixes, parents, cache):
        n = len(prefixes)
        m = T.Tensor(np.repeat(mem, n, axis=0), dtype=mem.dtype)
        if cache is not None:
            cache = [T.Tensor(c.data[parents], dtype=c.dtype) for c in cache]
        logp, new_cache = model.decoder.step(m, np.full(n, mem_length), prefixes, cache)
        return logp, new_cache
    return fn


def decode_utterance(model, features: np.ndarray, cfg: DecodeConfig) -> list[int]:
    """Decode one utterance in ``cfg.mode``; returns label ids without specials."""
    cfg.validate()
    with T.no_grad():
        out = model.encode(T.Tensor(features, dtype=model.dtype), training=False)
        memory = out.final_memory
        Tp = int(out.lengths[0])
        if Tp == 0:
            raise ContractError("empty encoder memory")
        labels = list(model.vocab.labels)
        if cfg.mode == "ctc":
            return ctc_greedy_decode(model.ctc_log_probs(memory).data[0])
        maxlen = max(1, math.ceil(cfg.maxlen_ratio * Tp))
        score_fn = decoder_score_fn(model, memory, Tp)
        if cfg.mode == "attention":
            return attention_beam_search(score_fn, labels, maxlen, cfg).labels
        ctc_lp = model.ctc_log_probs(memory).data[0]
        return hybrid_beam_search(score_fn, ctc_lp, labels, maxlen, cfg).labels


def hybrid_beam_search(score_fn: ScoreFn, ctc_log_probs, labels, maxlen: int,
                       cfg: DecodeConfig) -> Hypothesis:
    return beam_search(score_fn, labels, maxlen, cfg, ctc_log_probs)


def attention_beam_search(score_fn: ScoreFn, labels, maxlen: int, cfg: DecodeConfig) -> Hypothesis:
    att_only = DecodeConfig("attention", cfg.beam_size, 0.0, 1.0, cfg.maxlen_ratio)
    return beam_search(score_fn, labels, maxlen, att_only)


def decode_set(model, utts: Sequence[Utterance], cfg: DecodeConfig, jobs: int = 1) -> list[list[int]]:
    """Decode many utterances; output order follows ``utts`` whatever ``jobs`` is."""
    if jobs <= 1:
        return [decode_utterance(model, u.features, cfg) for u in utts]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(lambda u: decode_utterance(model, u.features, cfg), utts))
