"""Binary checkpoint format.

Layout (little-endian)::

    magic   8 bytes  b"RSTSPLT\\0"
    version u32
    count   u32
    count x { name_len u32, name utf-8, rank u32, dims u32 * rank,
              data float32 * prod(dims), row-major }

The vocabulary sits next to it in ``<path>.vocab`` (one token per line, row
index = line index) and the model configuration plus label inventory in
``<path>.json``.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .document import RelationLabel
from .model import ModelConfig, ModelParams

MAGIC = b"RSTSPLT\0"
VERSION = 1
FROZEN_ENTRY = "word_emb.frozen"


class CheckpointError(ValueError):
    pass


def _sidecars(path):
    path = Path(path)
    return path.with_name(path.name + ".vocab"), path.with_name(path.name + ".json")


def write_entries(path, entries: dict) -> None:
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(entries)))
        for name, arr in entries.items():
            raw = name.encode("utf-8")
            arr = np.ascontiguousarray(arr, dtype="<f4")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes(order="C"))


def read_entries(path) -> dict:
    data = Path(path).read_bytes()
    if data[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    version, count = struct.unpack_from("<II", data, 8)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version}")
    pos = 16
    out = {}
    try:
        for _ in range(count):
            (nlen,) = struct.unpack_from("<I", data, pos)
            pos += 4
            name = data[pos:pos + nlen].decode("utf-8")
            pos += nlen
            (rank,) = struct.unpack_from("<I", data, pos)
            pos += 4
            dims = struct.unpack_from(f"<{rank}I", data, pos)
            pos += 4 * rank
            size = int(np.prod(dims)) if rank else 1
            arr = np.frombuffer(data, dtype="<f4", count=size, offset=pos).reshape(dims)
            pos += 4 * size
            out[name] = arr.astype(np.float32)
    except (struct.error, ValueError) as exc:
        raise CheckpointError(f"{path}: truncated checkpoint ({exc})") from None
    if pos != len(data):
        raise CheckpointError(f"{path}: {len(data) - pos} trailing bytes")
    return out


def save_checkpoint(params: ModelParams, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    entries = dict(params.arrays)
    entries[FROZEN_ENTRY] = params.frozen.astype(np.float32)
    write_entries(path, entries)
    vocab_path, meta_path = _sidecars(path)
    vocab_path.write_text("".join(t + "\n" for t in params.vocab), encoding="utf-8")
    meta = {"format_version": VERSION, "config": asdict(params.config),
            "labels": [str(l) for l in params.labels]}
    meta_path.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def load_checkpoint(path) -> ModelParams:
    vocab_path, meta_path = _sidecars(path)
    for p in (path, vocab_path, meta_path):
        if not Path(p).exists():
            raise CheckpointError(f"missing checkpoint file {p}")
    entries = read_entries(path)
    vocab = vocab_path.read_text(encoding="utf-8").split("\n")[:-1]
    meta = json.loads(meta_path.read_text(encoding="utf-8"))
    cfg = ModelConfig(**meta["config"])
    labels = [RelationLabel.parse(s) for s in meta["labels"]]
    frozen = entries.pop(FROZEN_ENTRY, None)
    params = ModelParams(cfg, vocab, labels, entries,
                         None if frozen is None else frozen > 0.5)
    if params["word_emb"].shape[0] != len(vocab):
        raise CheckpointError("vocabulary size does not match the embedding table")
    return params
