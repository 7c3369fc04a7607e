"""Connectionist temporal classification: loss, oracle and prefix scoring.

All recursions run in float64 log space. Log-zero is the sentinel
``LOG_ZERO = -1e30``; it is finite so that ``logaddexp`` never produces NaN,
and far enough below any real log-probability (a path of 10^6 frames each at
probability 1e-300 only reaches about -7e8) that it never wins a comparison.
"""
from __future__ import annotations

import itertools
from typing import Sequence

import numpy as np

from .tensor import ContractError, Tensor, record

LOG_ZERO = -1e30
BLANK = 0


class CTCInfeasibleError(ValueError):
    """The label sequence cannot be aligned to the available frames."""


class OracleTooLargeError(ValueError):
    """Brute-force enumeration was requested on an instance that is too large."""


def extended_labels(labels: Sequence[int], blank: int = BLANK) -> np.ndarray:
    """``blank, l1, blank, l2, ..., blank`` (length ``2L + 1``)."""
    ext = np.full(2 * len(labels) + 1, blank, dtype=np.int64)
    ext[1::2] = labels
    return ext


def min_frames(labels: Sequence[int]) -> int:
    """Fewest frames any alignment of ``labels`` needs: one per label plus a
    separating blank for every adjacent repeat."""
    repeats = sum(1 for a, b in zip(labels, labels[1:]) if a == b)
    return len(labels) + repeats


def _check_feasible(T: int, labels: Sequence[int]) -> None:
    need = min_frames(labels)
    if T < need:
        raise CTCInfeasibleError(f"{T} frames cannot align {len(labels)} labels (need {need})")


def _lse(*xs):
    out = xs[0]
    for x in xs[1:]:
        out = np.logaddexp(out, x)
    return out


def _shift(x: np.ndarray, k: int) -> np.ndarray:
    """``out[s] = x[s - k]`` (negative ``k`` shifts left), padding with log-zero."""
    out = np.full_like(x, LOG_ZERO)
    if k >= 0:
        out[k:] = x[:len(x) - k]
    else:
        out[:k] = x[-k:]
    return out


def ctc_forward_backward(log_probs: np.ndarray, labels: Sequence[int], blank: int = BLANK):
    """Return ``(nll, grad)`` where ``grad`` is d(nll)/d(log_probs).

    ``log_probs`` is ``[T, V]`` with rows that are log-distributions. The
    gradient treats every entry as an independent input (the normalising
    log-softmax, if any, is differentiated by its own op).
    """
    lp = np.asarray(log_probs, dtype=np.float64)
    T, V = lp.shape
    labels = [int(l) for l in labels]
    if any(l == blank or not 0 <= l < V for l in labels):
        raise ContractError(f"labels must be non-blank ids below {V}: {labels}")
    _check_feasible(T, labels)
    ext = extended_labels(labels, blank)
    S = len(ext)
    emit = lp[:, ext]  # [T, S]
    # s -> s+2 skip allowed into label positions whose label differs from two back
    skip = np.zeros(S, dtype=bool)
    skip[3::2] = ext[3::2] != ext[1:-2:2]

    alpha = np.full((T, S), LOG_ZERO)
    alpha[0, 0] = emit[0, 0]
    if S > 1:
        alpha[0, 1] = emit[0, 1]
    for t in range(1, T):
        prev = alpha[t - 1]
        stay = prev
        step = _shift(prev, 1)
        jump = np.where(skip, _shift(prev, 2), LOG_ZERO)
        alpha[t] = _lse(stay, step, jump) + emit[t]

    beta = np.full((T, S), LOG_ZERO)
    beta[T - 1, S - 1] = 0.0
    if S > 1:
        beta[T - 1, S - 2] = 0.0
    skip_from = np.zeros(S, dtype=bool)
    skip_from[:-2] = skip[2:]
    for t in range(T - 2, -1, -1):
        nxt = beta[t + 1] + emit[t + 1]
        stay = nxt
        step = _shift(nxt, -1)
        jump = np.where(skip_from, _shift(nxt, -2), LOG_ZERO)
        beta[t] = _lse(stay, step, jump)

    logp = np.logaddexp(alpha[T - 1, S - 1], alpha[T - 1, S - 2]) if S > 1 else alpha[T - 1, 0]
    occ = np.exp(alpha + beta - logp)  # posterior occupancy of (t, s)
    grad = np.zeros_like(lp)
    for s in range(S):
        grad[:, ext[s]] -= occ[:, s]
    return float(-logp), grad


def ctc_loss(log_probs: Tensor, labels: Sequence[int], blank: int = BLANK) -> Tensor:
    """Negative log-likelihood of ``labels`` under per-frame ``log_probs`` ``[T, V]``.

    Raises :class:`CTCInfeasibleError` instead of returning infinity when the
    frames are too few.
    """
    if log_probs.ndim != 2:
        raise ContractError(f"ctc_loss expects [T, V] log-probs, got {log_probs.shape}")
    nll, grad = ctc_forward_backward(log_probs.data, labels, blank)
    grad = grad.astype(log_probs.dtype)
    return record(np.asarray(nll, dtype=log_probs.dtype), (log_probs,), lambda g: (g * grad,))


def ctc_loss_batch(log_probs: Tensor, lengths: Sequence[int], labels: Sequence[Sequence[int]],
                   blank: int = BLANK) -> Tensor:
    """Mean per-utterance CTC loss over a padded batch ``[B, T, V]``."""
    B = log_probs.shape[0]
    grad = np.zeros(log_probs.shape, dtype=np.float64)
    total = 0.0
    for b in range(B):
        n = int(lengths[b])
        nll, g = ctc_forward_backward(log_probs.data[b, :n], labels[b], blank)
        total += nll
        grad[b, :n] = g
    grad = (grad / B).astype(log_probs.dtype)
    return record(np.asarray(total / B, dtype=log_probs.dtype), (log_probs,), lambda g: (g * grad,))


def collapse(path: Sequence[int], blank: int = BLANK) -> list[int]:
    """Merge repeated symbols, then drop blanks."""
    out = []
    prev = None
    for p in path:
        if p != prev and p != blank:
            out.append(int(p))
        prev = p
    return out


def ctc_loss_bruteforce(log_probs, labels: Sequence[int], blank: int = BLANK) -> float:
    """Enumerate all ``V**T`` frame paths. Test oracle only (``T <= 6``, ``V <= 4``)."""
    lp = np.asarray(log_probs.data if isinstance(log_probs, Tensor) else log_probs, dtype=np.float64)
    T, V = lp.shape
    if T > 6 or V > 4:
        raise OracleTooLargeError(f"brute force limited to T<=6, V<=4; got T={T}, V={V}")
    target = [int(l) for l in labels]
    if len(target) > T:
        raise CTCInfeasibleError(f"label of length {len(target)} exceeds {T} frames")
    scores = [lp[np.arange(T), path].sum()
              for path in itertools.product(range(V), repeat=T)
              if collapse(path, blank) == target]
    if not scores:
        raise CTCInfeasibleError(f"no path of {T} frames collapses to {target}")
    return float(-np.logaddexp.reduce(scores))


def ctc_prefix_bruteforce(log_probs, prefix: Sequence[int], blank: int = BLANK) -> float:
    """log P(collapsed output starts with ``prefix``) by enumeration."""
    lp = np.asarray(log_probs, dtype=np.float64)
    T, V = lp.shape
    if T > 6 or V > 4:
        raise OracleTooLargeError(f"brute force limited to T<=6, V<=4; got T={T}, V={V}")
    prefix = list(prefix)
    scores = [lp[np.arange(T), path].sum()
              for path in itertools.product(range(V), repeat=T)
              if collapse(path, blank)[:len(prefix)] == prefix]
    return float(np.logaddexp.reduce(scores)) if scores else LOG_ZERO


class CTCPrefixScorer:
    """Incremental prefix probabilities over one utterance's CTC posteriors.

    A state is ``(r_nonblank, r_blank, score)``: forward log-probabilities of
    the prefix ending at each frame in a label or a blank, and the prefix's
    log-probability of being the start of the output.
    """

    def __init__(self, log_probs, eos: int, blank: int = BLANK):
        self.lp = np.asarray(log_probs, dtype=np.float64)
        self.T = self.lp.shape[0]
        self.eos = eos
        self.blank = blank

    def initial_state(self):
        r_n = np.full(self.T, LOG_ZERO)
        r_b = np.cumsum(self.lp[:, self.blank])
        return r_n, r_b, 0.0

    def extend(self, prefix: Sequence[int], state, tokens: Sequence[int]):
        """Score every token in ``tokens`` appended to ``prefix``.

        Returns ``(scores, states)`` with one entry per token. ``eos`` yields
        the probability that the output is exactly ``prefix``.
        """
        r_n, r_b, _ = state
        T = self.T
        tokens = np.asarray(tokens, dtype=np.int64)
        scores = np.empty(len(tokens))
        states = [None] * len(tokens)
        is_eos = tokens == self.eos
        full = np.logaddexp(r_n[-1], r_b[-1])
        scores[is_eos] = full
        labs = tokens[~is_eos]
        if len(labs):
            last = prefix[-1] if len(prefix) else None
            y = self.lp[:, labs]  # [T, C]
            phi = np.where((labs == last)[None, :], r_b[:, None], np.logaddexp(r_b, r_n)[:, None])
            hn = np.full((T, len(labs)), LOG_ZERO)
            hb = np.full((T, len(labs)), LOG_ZERO)
            if not len(prefix):
                hn[0] = y[0]
            psi = hn[0].copy()
            for t in range(1, T):
                hn[t] = np.logaddexp(hn[t - 1], phi[t - 1]) + y[t]
                hb[t] = np.logaddexp(hb[t - 1], hn[t - 1]) + self.lp[t, self.blank]
                psi = np.logaddexp(psi, phi[t - 1] + y[t])
            idx = np.flatnonzero(~is_eos)
            for j, i in enumerate(idx):
                scores[i] = psi[j]
                states[i] = (hn[:, j].copy(), hb[:, j].copy(), float(psi[j]))
        return scores, states


def ctc_prefix_score(log_probs, prefix: Sequence[int], eos: int | None = None,
                     blank: int = BLANK) -> float:
    """log P(CTC output begins with ``prefix``).

    When ``prefix`` ends in ``eos`` the result is the probability that the
    output equals the tokens before it, i.e. ``-ctc_loss``.
    """
    lp = np.asarray(log_probs.data if isinstance(log_probs, Tensor) else log_probs, dtype=np.float64)
    prefix = [int(p) for p in prefix]
    if eos is None:
        eos = -1
    if eos in prefix[:-1]:
        raise ContractError("eos may only terminate a prefix")
    scorer = CTCPrefixScorer(lp, eos=eos, blank=blank)
    state = scorer.initial_state()
    score = 0.0
    done: list[int] = []
    for tok in prefix:
        scores, states = scorer.extend(done, state, [tok])
        score = float(scores[0])
        if tok == eos:
            break
        state = states[0]
        done.append(tok)
    return score
