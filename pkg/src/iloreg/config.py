"""Flat dotted-key run configuration.

A config file is a YAML mapping whose keys are dotted names such as
``encoder.num_layers``; every key can also be set on the command line with
``--set encoder.num_layers=4``. Unknown keys are rejected.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import yaml

from .corpus import ToyCorpusSpec
from .decoder import DecoderConfig
from .decoding import DecodeConfig
from .encoder import EncoderConfig
from .tensor import ConfigurationError
from .training import SpecAugmentConfig, TrainConfig, default_tap

ENCODER_KEYS = ("num_layers", "d_model", "num_heads", "ffn_dim", "conv_kernel", "ilo_layer",
                "subsample_factor", "final_norm")
DECODER_KEYS = ("num_layers", "num_heads", "ffn_dim")


@dataclass
class RunSettings:
    out_dir: str = "runs/default"
    corpus_dir: str = "runs/corpus"


@dataclass
class RunConfig:
    corpus: ToyCorpusSpec = field(default_factory=ToyCorpusSpec)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    decoder: DecoderConfig = field(default_factory=DecoderConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    decode: DecodeConfig = field(default_factory=DecodeConfig)
    specaug: SpecAugmentConfig = field(default_factory=SpecAugmentConfig)
    run: RunSettings = field(default_factory=RunSettings)

    _SECTIONS = ("corpus", "encoder", "decoder", "train", "decode", "specaug", "run")

    @classmethod
    def allowed_keys(cls) -> dict[str, Any]:
        """Dotted key -> default value."""
        base = cls()
        keys = {}
        for sec in cls._SECTIONS:
            obj = getattr(base, sec)
            names = {"encoder": ENCODER_KEYS, "decoder": DECODER_KEYS}.get(
                sec, [f.name for f in dataclasses.fields(obj)])
            for name in names:
                keys[f"{sec}.{name}"] = getattr(obj, name)
        return keys

    def set(self, key: str, value: Any) -> None:
        allowed = self.allowed_keys()
        if key not in allowed:
            raise ConfigurationError(f"unknown config key {key!r}")
        sec, name = key.split(".", 1)
        obj = getattr(self, sec)
        setattr(obj, name, _coerce(key, value, allowed[key], obj, name))

    def to_flat(self) -> dict[str, Any]:
        return {k: getattr(getattr(self, k.split(".")[0]), k.split(".", 1)[1]) for k in self.allowed_keys()}

    def dump(self) -> str:
        return yaml.safe_dump(self.to_flat(), sort_keys=True, default_flow_style=False)

    # -- derived model configs ------------------------------------------------
    def encoder_config(self, regime: Optional[str] = None, ilo_layer: Optional[int] = None) -> EncoderConfig:
        regime = regime or self.train.regime
        e = dataclasses.replace(self.encoder, feat_dim=self.corpus.feat_dim, dropout_p=self.train.dropout_p)
        if regime == "baseline":
            e.ilo_layer = None
        else:
            choices = (ilo_layer, self.encoder.ilo_layer, default_tap(e.num_layers))
            e.ilo_layer = next(c for c in choices if c is not None)
        return e

    def decoder_config(self) -> DecoderConfig:
        return dataclasses.replace(self.decoder, d_model=self.encoder.d_model,
                                   dropout_p=self.train.dropout_p, vocab_size=self.corpus.vocab.size)

    def validate(self) -> None:
        self.corpus.validate()
        self.encoder_config().validate()
        self.decoder_config().validate()
        self.train.validate()
        self.decode.validate()


def _coerce(key: str, value: Any, default: Any, obj, name: str):
    if isinstance(value, str):
        try:
            value = yaml.safe_load(value) if value != "" else value
        except yaml.YAMLError:
            pass
    hint = {f.name: f.type for f in dataclasses.fields(obj)}.get(name, "")
    if value is None:
        if default is None or "Optional" in str(hint):
            return None
        raise ConfigurationError(f"{key}: a value is required")
    target = type(default) if default is not None else (int if "int" in str(hint) else float)
    try:
        if target is bool:
            if not isinstance(value, bool):
                raise TypeError
            return value
        if target is int and isinstance(value, float) and not value.is_integer():
            raise TypeError
        return target(value)
    except (TypeError, ValueError):
        raise ConfigurationError(f"{key}: cannot use {value!r} as {target.__name__}") from None


def load_config(path: Optional[str] = None, overrides: Optional[list[str]] = None) -> RunConfig:
    cfg = RunConfig()
    if path:
        data = yaml.safe_load(Path(path).read_text()) or {}
        if not isinstance(data, dict):
            raise ConfigurationError(f"{path}: expected a mapping of dotted keys")
        for k, v in data.items():
            cfg.set(str(k), v)
    for item in overrides or []:
        if "=" not in item:
            raise ConfigurationError(f"override {item!r} must look like key=value")
        k, v = item.split("=", 1)
        cfg.set(k.strip(), v)
    return cfg
