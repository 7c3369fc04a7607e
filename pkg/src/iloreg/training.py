"""Epoch loop, Noam-scheduled Adam, validation accuracy and the regime comparison."""
from __future__ import annotations

import csv
import io
import logging
import math
import time
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from . import tensor as T
from .checkpoint import Checkpoint
from .corpus import Corpus, Utterance
from .ctc import min_frames
from .losses import REGIMES, LossWeights, default_gamma
from .model import ILOModel, build_model, make_batch
from .tensor import ConfigurationError, ContractError, Tape, backward, no_grad

log = logging.getLogger(__name__)


def noam_lr(step: int, d_model: int, warmup: int, factor: float = 1.0) -> float:
    """factor * d_model^-0.5 * min(step^-0.5, step * warmup^-1.5)"""
    if step < 1:
        raise ContractError(f"noam_lr is defined for step >= 1, got {step}")
    return factor * d_model ** -0.5 * min(step ** -0.5, step * warmup ** -1.5)


class Adam:
    def __init__(self, params: dict, betas=(0.9, 0.98), eps: float = 1e-9):
        self.params = params
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self, lr: float) -> None:
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for k, p in self.params.items():
            g = p.grad
            m, v = self.m[k], self.v[k]
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p.data -= (lr / c1) * m / (np.sqrt(v / c2) + self.eps)


@dataclass
class SpecAugmentConfig:
    num_time_masks: int = 1
    time_mask_width: int = 4
    num_freq_masks: int = 2
    freq_mask_width: int = 2


def spec_augment_lite(features: np.ndarray, cfg: SpecAugmentConfig, rng: np.random.Generator,
                      training: bool = True) -> np.ndarray:
    """Zero fixed-width time spans and feature channels on a copy of ``features``."""
    if not training:
        return features
    Tn, D = features.shape
    if cfg.num_time_masks and cfg.time_mask_width >= Tn:
        raise ConfigurationError(f"time mask width {cfg.time_mask_width} must be below {Tn} frames")
    if cfg.num_freq_masks and cfg.freq_mask_width >= D:
        raise ConfigurationError(f"feature mask width {cfg.freq_mask_width} must be below {D} channels")
    out = features.copy()
    for _ in range(cfg.num_time_masks):
        s = int(rng.integers(0, Tn - cfg.time_mask_width + 1))
        out[s: s + cfg.time_mask_width] = 0.0
    for _ in range(cfg.num_freq_masks):
        s = int(rng.integers(0, D - cfg.freq_mask_width + 1))
        out[:, s: s + cfg.freq_mask_width] = 0.0
    return out


@dataclass
class TrainConfig:
    regime: str = "baseline"
    alpha: float = 0.3
    gamma: Optional[float] = None
    epochs: int = 30
    batch_size: int = 16
    warmup_steps: int = 400
    lr_factor: float = 1.0
    seed: int = 0
    dropout_p: float = 0.1
    label_smoothing: float = 0.1
    spec_augment: bool = False
    inter_units: str = "fine"
    average_best: int = 5

    def validate(self) -> None:
        if self.regime not in REGIMES:
            raise ConfigurationError(f"train.regime must be one of {REGIMES}, got {self.regime!r}")
        if self.epochs < 1 or self.batch_size < 1 or self.warmup_steps < 1:
            raise ConfigurationError("train.epochs, train.batch_size and train.warmup_steps must be positive")
        if self.lr_factor <= 0:
            raise ConfigurationError("train.lr_factor must be positive")
        LossWeights.from_alpha_gamma(self.alpha, self.effective_gamma)

    @property
    def effective_gamma(self) -> float:
        if self.regime == "baseline":
            return 0.0
        return default_gamma(self.regime) if self.gamma is None else float(self.gamma)

    @property
    def weights(self) -> LossWeights:
        return LossWeights.from_alpha_gamma(self.alpha, self.effective_gamma)


@dataclass
class TrainMetricsRow:
    epoch: int
    l_ctc: float
    l_att: float
    l_inter: Optional[float]
    combined: float
    dev_accuracy: float
    wall_seconds: float = field(default=0.0, compare=False)


def metrics_header(regime: str) -> list[str]:
    cols = ["epoch", "l_ctc", "l_att"]
    if regime == "proposed":
        cols.append("l_att_inter")
    elif regime == "ilo_ctc":
        cols.append("l_ctc_inter")
    return cols + ["combined", "dev_accuracy"]


def metrics_csv(rows: Iterable[TrainMetricsRow], regime: str) -> str:
    """CSV text. Wall-clock time is left out so reruns are byte-identical."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(metrics_header(regime))
    for r in rows:
        vals = [r.epoch, repr(r.l_ctc), repr(r.l_att)]
        if regime != "baseline":
            vals.append(repr(r.l_inter))
        w.writerow(vals + [repr(r.combined), repr(r.dev_accuracy)])
    return buf.getvalue()


def step_seed(seed: int, step: int) -> int:
    return int(np.random.SeedSequence([seed, step]).generate_state(1, np.uint64)[0])


def validation_accuracy(model: ILOModel, utts: Sequence[Utterance], batch_size: int = 50) -> float:
    """Teacher-forced next-token accuracy of the primary (final-layer) decoder pass."""
    if not utts:
        raise ContractError("validation set is empty")
    correct = total = 0
    with no_grad():
        for i in range(0, len(utts), batch_size):
            b = make_batch(utts[i: i + batch_size], model.dtype)
            out = model.encode(T.Tensor(b.feats, dtype=model.dtype), b.lengths, training=False)
            logits = model.decoder_logits(out.final_memory, out.lengths, b.ys_in, training=False)
            pred = logits.data.argmax(axis=-1)
            valid = np.arange(b.ys_out.shape[1])[None, :] < b.ys_lengths[:, None]
            correct += int(((pred == b.ys_out) & valid).sum())
            total += int(valid.sum())
    return correct / total


class Trainer:
    """Owns the optimizer state and step counter for one training run."""

    def __init__(self, model: ILOModel, corpus: Corpus, cfg: TrainConfig,
                 augment: Optional[SpecAugmentConfig] = None):
        cfg.validate()
        if model.regime != cfg.regime:
            raise ConfigurationError(f"model regime {model.regime!r} differs from train.regime {cfg.regime!r}")
        if corpus.vocab.size != model.dec_cfg.vocab_size:
            raise ConfigurationError(
                f"corpus vocabulary ({corpus.vocab.size}) differs from model vocab_size ({model.dec_cfg.vocab_size})")
        self.model = model
        self.corpus = corpus
        self.cfg = cfg
        self.weights = cfg.weights
        self.augment = augment or SpecAugmentConfig()
        self.params = model.named_parameters()
        self.opt = Adam(self.params)
        self.step = 0
        self.epoch = 0
        self.train_set, self.skipped = self._feasible(corpus.train)
        self.checkpoints: list[Checkpoint] = []

    def _feasible(self, utts):
        f = self.model.enc_cfg.subsample_factor
        keep, skipped = [], 0
        for u in utts:
            frames = u.num_frames // f
            need = [min_frames(u.labels)]
            if self.cfg.regime == "ilo_ctc":
                need.append(min_frames(self.model.inter_labels(u.labels)))
            if u.num_frames < f or frames < max(need):
                log.warning("skipping %s: %d encoder frames cannot align its labels", u.uid, frames)
                skipped += 1
            else:
                keep.append(u)
        return keep, skipped

    def train_epoch(self) -> TrainMetricsRow:
        cfg = self.cfg
        self.epoch += 1
        t0 = time.perf_counter()
        order = np.random.default_rng([cfg.seed, self.epoch]).permutation(len(self.train_set))
        sums = np.zeros(4)
        nb = 0
        for i in range(0, len(order), cfg.batch_size):
            utts = [self.train_set[j] for j in order[i: i + cfg.batch_size]]
            self.step += 1
            seed = step_seed(cfg.seed, self.step)
            if cfg.spec_augment:
                rng = np.random.default_rng([seed, 1])
                utts = [Utterance(u.uid, spec_augment_lite(u.features, self.augment, rng), u.labels)
                        for u in utts]
            batch = make_batch(utts, self.model.dtype)
            self.model.zero_grad()
            with Tape(seed):
                loss, rep = self.model.loss(batch, self.weights, training=True,
                                            smoothing=cfg.label_smoothing)
                backward(loss)
            self.opt.step(noam_lr(self.step, self.model.enc_cfg.d_model, cfg.warmup_steps, cfg.lr_factor))
            inter = rep.l_att_inter if rep.l_att_inter is not None else (rep.l_ctc_inter or 0.0)
            sums += (rep.l_ctc, rep.l_att, inter, rep.combined)
            nb += 1
        acc = validation_accuracy(self.model, self.corpus.dev)
        mean = sums / max(nb, 1)
        row = TrainMetricsRow(self.epoch, float(mean[0]), float(mean[1]),
                              float(mean[2]) if cfg.regime != "baseline" else None,
                              float(mean[3]), acc, time.perf_counter() - t0)
        self.checkpoints.append(Checkpoint(self.epoch, self.model.state_dict(), acc,
                                           {"seed": cfg.seed, "step": self.step}))
        log.info("%s epoch %d: combined %.4f dev_acc %.4f (%.1fs)", cfg.regime, self.epoch,
                 row.combined, acc, row.wall_seconds)
        return row

    def fit(self) -> list[TrainMetricsRow]:
        return [self.train_epoch() for _ in range(self.cfg.epochs)]


def train_epoch(trainer: Trainer) -> TrainMetricsRow:
    return trainer.train_epoch()


def default_tap(num_layers: int) -> int:
    """Relative depth 0.75 (layer 9 of 12), kept strictly below the top layer."""
    return min(max(1, math.ceil(0.75 * num_layers)), num_layers - 1)


def compare_regimes(corpus: Corpus, enc_cfg, dec_cfg, base: TrainConfig,
                    gammas: Optional[dict] = None, ilo_layer: Optional[int] = None):
    """Train baseline, proposed and ilo_ctc from one shared initialisation.

    Returns ``(rows, runs)``: rows are ``(epoch, acc_baseline, acc_proposed,
    acc_ilo_ctc)`` starting at epoch 0 (the shared initial model), and runs
    maps regime to its list of :class:`TrainMetricsRow`.
    """
    gammas = {"proposed": 0.2, "ilo_ctc": 0.15, **(gammas or {})}
    tap = ilo_layer or default_tap(enc_cfg.num_layers)
    init = build_model(enc_cfg, dec_cfg, "baseline", base.seed).state_dict()
    accs = {}
    runs = {}
    for regime in REGIMES:
        ecfg = type(enc_cfg)(**{**enc_cfg.__dict__, "ilo_layer": None if regime == "baseline" else tap})
        model = build_model(ecfg, dec_cfg, regime, base.seed, inter_units=base.inter_units)
        model.load_state_dict(init, strict=False)
        cfg = TrainConfig(**{**base.__dict__, "regime": regime, "gamma": gammas.get(regime)})
        trainer = Trainer(model, corpus, cfg)
        acc0 = validation_accuracy(model, corpus.dev)
        rows = trainer.fit()
        runs[regime] = rows
        accs[regime] = [acc0] + [r.dev_accuracy for r in rows]
    table = [(e, accs["baseline"][e], accs["proposed"][e], accs["ilo_ctc"][e])
             for e in range(base.epochs + 1)]
    return table, runs


def compare_csv(table) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["epoch", "acc_baseline", "acc_proposed", "acc_ilo_ctc"])
    for e, a, b, c in table:
        w.writerow([e, repr(a), repr(b), repr(c)])
    return buf.getvalue()
