"""Attention cross-entropy and the three composite training objectives.

* baseline:  alpha * ctc + (1 - alpha) * att
* proposed:  alpha * ctc + beta * att + gamma * att(intermediate memory, same decoder)
* ilo_ctc:   alpha * ctc + beta * att + gamma * ctc(intermediate memory, extra head)
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import tensor as T
from .tensor import ConfigurationError, ContractError, Tensor

REGIMES = ("baseline", "proposed", "ilo_ctc")
SIMPLEX_TOL = 1e-9


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 0.3
    beta: float = 0.7
    gamma: float = 0.0

    def __post_init__(self):
        for k in ("alpha", "beta", "gamma"):
            if getattr(self, k) < 0:
                raise ConfigurationError(f"loss weight {k} must be nonnegative, got {getattr(self, k)}")
        if abs(self.alpha + self.beta + self.gamma - 1.0) > SIMPLEX_TOL:
            raise ConfigurationError(
                f"loss weights must sum to 1, got {self.alpha} + {self.beta} + {self.gamma}")

    @classmethod
    def from_alpha_gamma(cls, alpha: float, gamma: float) -> "LossWeights":
        """beta is whatever remains on the simplex."""
        return cls(alpha, 1.0 - alpha - gamma, gamma)


@dataclass
class LossReport:
    regime: str
    l_ctc: float
    l_att: float
    combined: float
    l_att_inter: Optional[float] = None
    l_ctc_inter: Optional[float] = None


def att_ce_loss(logits: Tensor, targets, smoothing: float = 0.1, lengths=None) -> Tensor:
    """Label-smoothed cross entropy averaged over non-padding target positions.

    ``logits`` is ``[L, V]`` or ``[B, L, V]``; ``targets`` has the matching
    leading shape. The smoothed target puts ``1 - smoothing`` on the reference
    token and spreads ``smoothing`` evenly over the other ``V - 1`` tokens.
    """
    if not 0.0 <= smoothing < 1.0:
        raise ConfigurationError(f"label smoothing must be in [0, 1), got {smoothing}")
    targets = np.asarray(targets, dtype=np.int64)
    if logits.shape[:-1] != targets.shape:
        raise ContractError(f"logits {logits.shape} do not match targets {targets.shape}")
    V = logits.shape[-1]
    if lengths is None:
        valid = np.ones(targets.shape, dtype=bool)
    else:
        valid = np.arange(targets.shape[-1])[None, :] < np.asarray(lengths)[:, None]
        valid = valid.reshape(targets.shape)
    dist = np.full(logits.shape, smoothing / (V - 1), dtype=logits.dtype)
    np.put_along_axis(dist, targets[..., None], 1.0 - smoothing, axis=-1)
    dist *= valid[..., None]
    logp = T.log_softmax(logits, axis=-1)
    return -(logp * dist).sum() * (1.0 / max(int(valid.sum()), 1))


def _combine(alpha, l_ctc, beta, l_att, gamma, l_extra):
    # One summation order for every regime so that gamma = 0 reproduces the baseline exactly.
    return alpha * l_ctc + beta * l_att + gamma * l_extra


def loss_baseline(l_ctc, l_att, alpha: float = 0.3):
    if not 0.0 <= alpha <= 1.0:
        raise ConfigurationError(f"alpha must be in [0, 1], got {alpha}")
    return _combine(alpha, l_ctc, 1.0 - alpha, l_att, 0.0, 0.0)


def loss_proposed(l_ctc, l_att, l_att_inter, w: LossWeights):
    return _combine(w.alpha, l_ctc, w.beta, l_att, w.gamma, l_att_inter)


def loss_ilo_ctc(l_ctc, l_att, l_ctc_inter, w: LossWeights):
    return _combine(w.alpha, l_ctc, w.beta, l_att, w.gamma, l_ctc_inter)


def combined_loss(regime: str, w: LossWeights, l_ctc, l_att, l_inter=None):
    if regime == "baseline":
        return loss_baseline(l_ctc, l_att, w.alpha)
    if regime == "proposed":
        return loss_proposed(l_ctc, l_att, l_inter, w)
    if regime == "ilo_ctc":
        return loss_ilo_ctc(l_ctc, l_att, l_inter, w)
    raise ConfigurationError(f"unknown regime {regime!r}; expected one of {REGIMES}")


def default_gamma(regime: str) -> float:
    """gamma used when a regime is selected without an explicit value."""
    return {"baseline": 0.0, "proposed": 0.2, "ilo_ctc": 0.15}[regime]


def check_report(r: LossReport, w: LossWeights, tol: float = 1e-9) -> bool:
    extra = r.l_att_inter if r.regime == "proposed" else r.l_ctc_inter
    expect = float(combined_loss(r.regime, w, r.l_ctc, r.l_att, 0.0 if extra is None else extra))
    return abs(expect - r.combined) <= tol * max(1.0, abs(expect))


__all__ = ["LossWeights", "LossReport", "att_ce_loss", "loss_baseline", "loss_proposed",
           "loss_ilo_ctc", "combined_loss", "default_gamma", "REGIMES"]

