"""Command line entry point: ``iloreg {gen,train,compare,sweep-layer,decode}``."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt
from .config import RunConfig, load_config
from .corpus import corpus_wer, generate_corpus, load_corpus, save_corpus
from .decoding import MODES, DecodeConfig, decode_set
from .model import build_model
from .tensor import ConfigurationError
from .training import Trainer, TrainConfig, compare_csv, compare_regimes, metrics_csv

log = logging.getLogger("iloreg")


class CommandError(RuntimeError):
    """A command cannot proceed; the message is shown to the user."""


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def _echo_config(cfg: RunConfig, out: Path) -> None:
    _write(out / "config.yaml", cfg.dump())


def _corpus(cfg: RunConfig):
    root = Path(cfg.run.corpus_dir)
    if not (root / "manifest.tsv").exists():
        raise CommandError(f"no corpus at {root}; run `iloreg gen` first")
    corpus = load_corpus(root)
    if corpus.spec.vocab_size != cfg.corpus.vocab_size or corpus.spec.feat_dim != cfg.corpus.feat_dim:
        raise CommandError(
            f"corpus at {root} has vocab_size={corpus.spec.vocab_size}, feat_dim={corpus.spec.feat_dim} "
            f"but the config asks for vocab_size={cfg.corpus.vocab_size}, feat_dim={cfg.corpus.feat_dim}")
    return corpus


def _train_one(cfg: RunConfig, corpus, regime: str, ilo_layer=None, out: Path | None = None,
               init: dict | None = None):
    """Train one model; returns (model, rows, averaged parameter map)."""
    tcfg = TrainConfig(**{**cfg.train.__dict__, "regime": regime})
    model = build_model(cfg.encoder_config(regime, ilo_layer), cfg.decoder_config(), regime,
                        tcfg.seed, inter_units=tcfg.inter_units)
    if init is not None:
        model.load_state_dict(init, strict=False)
    trainer = Trainer(model, corpus, tcfg, cfg.specaug)
    if trainer.skipped:
        log.warning("%d training utterances skipped as CTC-infeasible", trainer.skipped)
    rows = []
    for _ in range(tcfg.epochs):
        rows.append(trainer.train_epoch())
        if out is not None:
            ckpt.save(trainer.checkpoints[-1], out / "checkpoints" / f"epoch_{trainer.epoch:03d}.ckpt")
    averaged = ckpt.average_checkpoints(trainer.checkpoints, tcfg.average_best)
    model.load_state_dict(averaged)
    return model, rows, averaged


# -- commands -------------------------------------------------------------------

def cmd_gen(cfg: RunConfig, args) -> None:
    cfg.corpus.validate()
    out = Path(cfg.run.corpus_dir)
    corpus = generate_corpus(cfg.corpus)
    save_corpus(corpus, out)
    _echo_config(cfg, out)
    print(f"wrote {len(corpus.train)}/{len(corpus.dev)}/{len(corpus.test)} utterances to {out}")


def cmd_train(cfg: RunConfig, args) -> None:
    cfg.validate()
    corpus = _corpus(cfg)
    out = Path(cfg.run.out_dir)
    _echo_config(cfg, out)
    regime = cfg.train.regime
    _, rows, averaged = _train_one(cfg, corpus, regime, out=out)
    _write(out / "metrics.csv", metrics_csv(rows, regime))
    final = ckpt.Checkpoint(cfg.train.epochs, averaged, max(r.dev_accuracy for r in rows),
                            {"seed": cfg.train.seed, "averaged_best": cfg.train.average_best})
    ckpt.save(final, out / "final.ckpt")
    print(f"{regime}: final dev accuracy {rows[-1].dev_accuracy:.4f}; model at {out / 'final.ckpt'}")


def cmd_compare(cfg: RunConfig, args) -> None:
    cfg.validate()
    corpus = _corpus(cfg)
    out = Path(cfg.run.out_dir)
    _echo_config(cfg, out)
    seeds = args.seeds or [cfg.train.seed]
    tables = []
    for seed in seeds:
        base = TrainConfig(**{**cfg.train.__dict__, "seed": seed})
        table, runs = compare_regimes(corpus, cfg.encoder_config("baseline"), cfg.decoder_config(), base,
                                      ilo_layer=cfg.encoder_config("proposed").ilo_layer)
        _write(out / f"compare_seed{seed}.csv", compare_csv(table))
        for regime, rows in runs.items():
            _write(out / f"metrics_{regime}_seed{seed}.csv", metrics_csv(rows, regime))
        tables.append(np.array(table, dtype=np.float64))
    mean = np.mean(tables, axis=0)
    _write(out / "compare.csv", compare_csv([(int(r[0]), *map(float, r[1:])) for r in mean]))
    last = mean[-1]
    print(f"final-epoch mean dev accuracy over {len(seeds)} seed(s): baseline {last[1]:.4f} "
          f"proposed {last[2]:.4f} ilo_ctc {last[3]:.4f}")


def cmd_sweep_layer(cfg: RunConfig, args) -> None:
    cfg.validate()
    n = cfg.encoder.num_layers
    layers = args.layers or list(range(1, n))
    bad = [l for l in layers if not 1 <= l < n]
    if bad:
        raise CommandError(f"tap layers {bad} out of range; valid layers are 1..{n - 1}")
    corpus = _corpus(cfg)
    out = Path(cfg.run.out_dir)
    _echo_config(cfg, out)
    dcfg = DecodeConfig(**{**cfg.decode.__dict__, "mode": "hybrid"})
    init = build_model(cfg.encoder_config("baseline"), cfg.decoder_config(), "baseline",
                       cfg.train.seed).state_dict()
    lines = ["layer,wer,seed\n"]
    for layer in layers:
        model, rows, _ = _train_one(cfg, corpus, "proposed", ilo_layer=layer, init=init)
        hyps = decode_set(model, corpus.test, dcfg, args.jobs)
        w = corpus_wer([u.labels for u in corpus.test], hyps)
        _write(out / f"metrics_layer{layer}.csv", metrics_csv(rows, "proposed"))
        lines.append(f"{layer},{w!r},{cfg.train.seed}\n")
        log.info("layer %d: test WER %.2f", layer, w)
    _write(out / "sweep.csv", "".join(lines))
    print("".join(lines), end="")


def cmd_decode(cfg: RunConfig, args) -> None:
    mode = args.mode or cfg.decode.mode
    cfg.decode.mode = mode
    cfg.validate()
    corpus = _corpus(cfg)
    out = Path(cfg.run.out_dir)
    model_path = Path(args.model) if args.model else out / "final.ckpt"
    if not model_path.exists():
        raise CommandError(f"model file {model_path} not found")
    state = ckpt.load(model_path).params
    regime = cfg.train.regime
    model = build_model(cfg.encoder_config(regime), cfg.decoder_config(), regime, cfg.train.seed,
                        inter_units=cfg.train.inter_units)
    model.load_state_dict(state)
    hyps = decode_set(model, corpus.test, cfg.decode, args.jobs)
    vocab = corpus.vocab
    lines = [f"{u.uid}\t{' '.join(map(str, h))}\t{vocab.detokenize(h)}\n" for u, h in zip(corpus.test, hyps)]
    w = corpus_wer([u.labels for u in corpus.test], hyps)
    _write(out / f"hyp_{mode}.txt", "".join(lines))
    _write(out / f"wer_{mode}.txt", f"mode={mode} utterances={len(hyps)} wer={w!r}\n")
    print(f"{mode} WER {w:.2f}% over {len(hyps)} test utterances")


COMMANDS = {"gen": cmd_gen, "train": cmd_train, "compare": cmd_compare,
            "sweep-layer": cmd_sweep_layer, "decode": cmd_decode}


def _int_list(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML file of dotted keys")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="override one config key (repeatable)")
    common.add_argument("--seed", type=int, help="shorthand for --set train.seed=S")
    common.add_argument("--jobs", type=int, default=1, help="parallel decode workers")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="iloreg", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("gen", parents=[common], help="generate the toy corpus")
    sub.add_parser("train", parents=[common], help="train one regime, average the best checkpoints")
    c = sub.add_parser("compare", parents=[common], help="dev accuracy per epoch for all three regimes")
    c.add_argument("--seeds", type=_int_list, help="comma-separated seeds (default: train.seed)")
    s = sub.add_parser("sweep-layer", parents=[common], help="test WER for each intermediate tap layer")
    s.add_argument("--layers", type=_int_list, help="comma-separated tap layers (default: all valid)")
    d = sub.add_parser("decode", parents=[common], help="decode the test set")
    d.add_argument("--mode", choices=MODES, help="default: decode.mode")
    d.add_argument("--model", help="checkpoint to decode (default: <out_dir>/final.ckpt)")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        overrides = list(args.overrides)
        if args.seed is not None:
            overrides.append(f"train.seed={args.seed}")
        cfg = load_config(args.config, overrides)
        COMMANDS[args.command](cfg, args)
    except (CommandError, ConfigurationError, FileNotFoundError, ckpt.CheckpointFormatError) as e:
        print(f"iloreg {args.command}: error: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
