"""Synthetic transduction corpus, token vocabularies, and WER scoring."""
from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .tensor import ConfigurationError, ContractError

BLANK, SOS, EOS = 0, 1, 2
NUM_SPECIALS = 3


@dataclass(frozen=True)
class Vocab:
    """Token ids: ``0`` blank, ``1`` sos, ``2`` eos, then ``num_tokens`` labels."""

    num_tokens: int

    @property
    def size(self) -> int:
        return self.num_tokens + NUM_SPECIALS

    @property
    def labels(self) -> range:
        return range(NUM_SPECIALS, self.size)

    def symbol(self, tok: int) -> str:
        if tok == BLANK:
            return "<b>"
        if tok == SOS:
            return "<sos>"
        if tok == EOS:
            return "<eos>"
        i = tok - NUM_SPECIALS
        return _letters(i)

    def detokenize(self, tokens: Sequence[int]) -> str:
        return " ".join(self.symbol(t) for t in tokens)


def _letters(i: int) -> str:
    s = ""
    i += 1
    while i:
        i, r = divmod(i - 1, 26)
        s = chr(97 + r) + s
    return s


@dataclass(frozen=True)
class CoarseVocab:
    """Merged-bigram view of a fine vocabulary (the subword analogue).

    Coarse ids keep the specials and every fine label id unchanged, then give
    one new id per entry of the merge table, so expansion is lossless.
    """

    fine: Vocab
    merges: tuple[tuple[int, int], ...]

    @classmethod
    def all_pairs(cls, fine: Vocab) -> "CoarseVocab":
        merges = tuple((a, b) for a in fine.labels for b in fine.labels if a != b)
        return cls(fine, merges)

    @property
    def size(self) -> int:
        return self.fine.size + len(self.merges)

    def _table(self) -> dict:
        return {m: self.fine.size + i for i, m in enumerate(self.merges)}

    def expand(self, coarse: Sequence[int]) -> list[int]:
        out: list[int] = []
        for t in coarse:
            if t >= self.fine.size:
                out.extend(self.merges[t - self.fine.size])
            else:
                out.append(int(t))
        return out


def coarse_vocab_view(labels: Sequence[int], coarse: CoarseVocab) -> list[int]:
    """Greedy left-to-right pairing of adjacent tokens found in the merge table."""
    table = coarse._table()
    out = []
    i = 0
    while i < len(labels):
        pair = tuple(int(t) for t in labels[i:i + 2])
        if len(pair) == 2 and pair in table:
            out.append(table[pair])
            i += 2
        else:
            out.append(int(labels[i]))
            i += 1
    return out


@dataclass
class ToyCorpusSpec:
    vocab_size: int = 12
    feat_dim: int = 16
    frames_per_token: int = 4
    noise_std: float = 0.3
    num_train: int = 500
    num_dev: int = 50
    num_test: int = 50
    min_len: int = 3
    max_len: int = 8
    seed: int = 0

    def validate(self) -> None:
        checks = {
            "vocab_size": self.vocab_size >= 2,
            "feat_dim": self.feat_dim >= 1,
            "frames_per_token": self.frames_per_token >= 1,
            "noise_std": self.noise_std >= 0,
            "num_train": self.num_train >= 1,
            "num_dev": self.num_dev >= 1,
            "num_test": self.num_test >= 1,
            "min_len": self.min_len >= 1,
            "max_len": self.max_len >= self.min_len,
        }
        for key, ok in checks.items():
            if not ok:
                raise ConfigurationError(f"corpus.{key}: invalid value {getattr(self, key)!r}")

    @property
    def vocab(self) -> Vocab:
        return Vocab(self.vocab_size)


@dataclass
class Utterance:
    uid: str
    features: np.ndarray  # [T, D] float32
    labels: list[int] = field(default_factory=list)

    @property
    def num_frames(self) -> int:
        return self.features.shape[0]


@dataclass
class Corpus:
    spec: ToyCorpusSpec
    train: list[Utterance]
    dev: list[Utterance]
    test: list[Utterance]

    @property
    def vocab(self) -> Vocab:
        return self.spec.vocab

    def splits(self) -> dict[str, list[Utterance]]:
        return {"train": self.train, "dev": self.dev, "test": self.test}


def generate_corpus(spec: ToyCorpusSpec) -> Corpus:
    """Build train/dev/test sets as a pure function of ``spec``.

    Each label owns a fixed prototype block of ``frames_per_token`` frames;
    an utterance is its labels' blocks concatenated plus Gaussian noise.
    Adjacent labels never repeat, so every utterance stays CTC-alignable when
    the encoder reduces one block to one frame.
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    vocab = spec.vocab
    protos = rng.standard_normal((vocab.num_tokens, spec.frames_per_token, spec.feat_dim))
    sets = {}
    for split, n in (("train", spec.num_train), ("dev", spec.num_dev), ("test", spec.num_test)):
        utts = []
        for k in range(n):
            length = int(rng.integers(spec.min_len, spec.max_len + 1))
            toks = [int(rng.integers(vocab.num_tokens))]
            while len(toks) < length:
                nxt = int(rng.integers(vocab.num_tokens - 1))
                toks.append(nxt + (nxt >= toks[-1]))
            feats = protos[toks].reshape(-1, spec.feat_dim)
            feats = feats + spec.noise_std * rng.standard_normal(feats.shape)
            labels = [t + NUM_SPECIALS for t in toks]
            utts.append(Utterance(f"{split}-{k:05d}", feats.astype(np.float32), labels))
        sets[split] = utts
    return Corpus(spec, sets["train"], sets["dev"], sets["test"])


# -- serialisation ------------------------------------------------------------

def write_features(path: Path, feats: np.ndarray) -> None:
    T, D = feats.shape
    with open(path, "wb") as f:
        f.write(struct.pack("<II", T, D))
        f.write(np.ascontiguousarray(feats, dtype="<f4").tobytes())


def read_features(path: Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    T, D = struct.unpack("<II", raw[:8])
    return np.frombuffer(raw[8:], dtype="<f4").reshape(T, D).astype(np.float32)


def save_corpus(corpus: Corpus, out_dir) -> Path:
    """Write ``manifest.tsv``, ``corpus.json`` and ``feats/<uid>.bin``."""
    out = Path(out_dir)
    (out / "feats").mkdir(parents=True, exist_ok=True)
    lines = []
    for utts in corpus.splits().values():
        for u in utts:
            rel = f"feats/{u.uid}.bin"
            write_features(out / rel, u.features)
            lines.append(f"{u.uid}\t{' '.join(map(str, u.labels))}\t{rel}\n")
    (out / "manifest.tsv").write_text("".join(lines))
    (out / "corpus.json").write_text(json.dumps(asdict(corpus.spec), indent=2, sort_keys=True) + "\n")
    return out


def load_corpus(in_dir) -> Corpus:
    root = Path(in_dir)
    if not (root / "manifest.tsv").exists():
        raise FileNotFoundError(f"no corpus manifest in {root}")
    spec = ToyCorpusSpec(**json.loads((root / "corpus.json").read_text()))
    sets: dict[str, list[Utterance]] = {"train": [], "dev": [], "test": []}
    for line in (root / "manifest.tsv").read_text().splitlines():
        uid, labels, rel = line.split("\t")
        split = uid.split("-", 1)[0]
        feats = read_features(root / rel)
        sets[split].append(Utterance(uid, feats, [int(t) for t in labels.split()]))
    return Corpus(spec, sets["train"], sets["dev"], sets["test"])


# -- scoring ------------------------------------------------------------------

def edit_distance(ref: Sequence, hyp: Sequence) -> int:
    """Levenshtein distance with unit substitution/insertion/deletion costs."""
    prev = list(range(len(hyp) + 1))
    for i, r in enumerate(ref, 1):
        cur = [i] + [0] * len(hyp)
        for j, h in enumerate(hyp, 1):
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (r != h))
        prev = cur
    return prev[-1]


def wer(ref: Sequence, hyp: Sequence) -> float:
    """Word error rate in percent; tokens stand in for words."""
    if len(ref) == 0:
        raise ContractError("wer needs a non-empty reference")
    return 100.0 * edit_distance(ref, hyp) / len(ref)


def corpus_wer(refs: Sequence[Sequence], hyps: Sequence[Sequence]) -> float:
    errors = sum(edit_distance(r, h) for r, h in zip(refs, hyps))
    return 100.0 * errors / sum(len(r) for r in refs)

