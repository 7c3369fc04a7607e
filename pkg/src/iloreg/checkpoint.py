"""Versioned binary checkpoint container and best-k parameter averaging.

Layout (all integers little-endian)::

    b"ILOCKPT\\0"               8-byte magic
    uint32 version              currently 1
    uint64 header_size
    header                      UTF-8 JSON: epoch, dev_accuracy, rng_state and
                                the parameter manifest [{name, shape, dtype}]
    payload                     raw little-endian floats, manifest order
    sha256 digest               32 bytes over everything above
"""
from __future__ import annotations

import hashlib
import json
import logging
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

log = logging.getLogger(__name__)

MAGIC = b"ILOCKPT\0"
VERSION = 1


class CheckpointFormatError(ValueError):
    """The file is not a readable checkpoint of a supported version."""


@dataclass
class Checkpoint:
    epoch: int
    params: dict[str, np.ndarray]
    dev_accuracy: float = 0.0
    rng_state: dict = field(default_factory=dict)


def dumps(ckpt: Checkpoint) -> bytes:
    manifest = []
    payload = []
    for name, arr in ckpt.params.items():
        arr = np.asarray(arr)
        dt = arr.dtype.newbyteorder("<")
        manifest.append({"name": name, "shape": list(arr.shape), "dtype": dt.str})
        payload.append(np.ascontiguousarray(arr, dtype=dt).tobytes())
    header = json.dumps({
        "epoch": int(ckpt.epoch),
        "dev_accuracy": float(ckpt.dev_accuracy),
        "rng_state": ckpt.rng_state,
        "params": manifest,
    }, sort_keys=True).encode("utf-8")
    body = MAGIC + struct.pack("<IQ", VERSION, len(header)) + header + b"".join(payload)
    return body + hashlib.sha256(body).digest()


def loads(raw: bytes) -> Checkpoint:
    if len(raw) < len(MAGIC) + 12 + 32 or raw[: len(MAGIC)] != MAGIC:
        raise CheckpointFormatError("not a checkpoint file (bad magic)")
    body, digest = raw[:-32], raw[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointFormatError("checkpoint checksum mismatch")
    version, hsize = struct.unpack("<IQ", body[len(MAGIC): len(MAGIC) + 12])
    if version != VERSION:
        raise CheckpointFormatError(f"unsupported checkpoint version {version}")
    off = len(MAGIC) + 12
    header = json.loads(body[off: off + hsize].decode("utf-8"))
    off += hsize
    params = {}
    for entry in header["params"]:
        dt = np.dtype(entry["dtype"])
        n = int(np.prod(entry["shape"], dtype=np.int64)) * dt.itemsize
        arr = np.frombuffer(body[off: off + n], dtype=dt).reshape(entry["shape"])
        params[entry["name"]] = arr.astype(dt.newbyteorder("="))
        off += n
    if off != len(body):
        raise CheckpointFormatError("trailing bytes after checkpoint payload")
    return Checkpoint(header["epoch"], params, header["dev_accuracy"], header["rng_state"])


def save(ckpt: Checkpoint, path) -> Path:
    """Write atomically: temp file in the same directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(dumps(ckpt))
    os.replace(tmp, path)
    return path


def load(path) -> Checkpoint:
    return loads(Path(path).read_bytes())


def select_best(checkpoints: Sequence[Checkpoint], k: int = 5) -> list[Checkpoint]:
    """Top ``k`` by dev accuracy; ties go to the later epoch."""
    ranked = sorted(checkpoints, key=lambda c: (c.dev_accuracy, c.epoch), reverse=True)
    return ranked[:k]


def average_checkpoints(checkpoints: Sequence[Checkpoint], k: int = 5) -> dict[str, np.ndarray]:
    """Element-wise mean of the best ``k`` parameter maps.

    The selected maps are summed in epoch order in float64, so the result does
    not depend on the order the checkpoints were passed in.
    """
    if not checkpoints:
        raise ValueError("no checkpoints to average")
    if len(checkpoints) < k:
        log.info("only %d checkpoints available, averaging all of them (asked for %d)", len(checkpoints), k)
    chosen = sorted(select_best(checkpoints, k), key=lambda c: c.epoch)
    out = {}
    for name, ref in chosen[0].params.items():
        acc = np.zeros(ref.shape, dtype=np.float64)
        for c in chosen:
            acc += c.params[name]
        out[name] = (acc / len(chosen)).astype(ref.dtype)
    return out
