"""Checkpoint container.

Layout (little-endian):

    offset 0    4 bytes  magic b"TDCK"
    offset 4    u32      format version (currently 1)
    offset 8    u64      header length H in bytes
    offset 16   H bytes  UTF-8 JSON header:
                           {"config": {...}, "vocab_sha256": "...", "vocab": [...],
                            "tensors": [{"name": ..., "shape": [...]}, ...]}
    offset 16+H          tensor payloads in header order, each float64 '<f8' row-major

The vocabulary digest is the SHA-256 of the tokens joined by newlines.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .config import Config
from .errors import FormatError
from .model import TDConvED
from .vocab import Vocabulary

MAGIC = b"TDCK"
VERSION = 1
_PREFIX = struct.Struct("<4sIQ")


def save_checkpoint(path, model: TDConvED, vocab: Vocabulary) -> None:
    header = {
        "config": model.cfg.to_dict(),
        "vocab_sha256": vocab.digest(),
        "vocab": vocab.tokens,
        "tensors": [{"name": k, "shape": list(v.shape)} for k, v in model.params.items()],
    }
    hb = json.dumps(header, sort_keys=True).encode("utf-8")
    tmp = Path(str(path) + ".tmp")
    with open(tmp, "wb") as f:
        f.write(_PREFIX.pack(MAGIC, VERSION, len(hb)))
        f.write(hb)
        for v in model.params.values():
            f.write(np.ascontiguousarray(v, dtype="<f8").tobytes())
    tmp.replace(path)


def load_checkpoint(path) -> tuple[TDConvED, Vocabulary]:
    raw = Path(path).read_bytes()
    if len(raw) < _PREFIX.size:
        raise FormatError(f"{path}: truncated checkpoint at byte offset {len(raw)}")
    magic, version, hlen = _PREFIX.unpack_from(raw, 0)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r} at byte offset 0")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    off = _PREFIX.size
    if len(raw) < off + hlen:
        raise FormatError(f"{path}: header truncated at byte offset {len(raw)}")
    header = json.loads(raw[off : off + hlen].decode("utf-8"))
    off += hlen
    vocab = Vocabulary(header["vocab"])
    if vocab.digest() != header["vocab_sha256"]:
        raise FormatError(f"{path}: vocabulary digest mismatch")
    params = {}
    for t in header["tensors"]:
        shape = tuple(t["shape"])
        n = int(np.prod(shape, dtype=np.int64)) * 8
        if len(raw) < off + n:
            raise FormatError(f"{path}: tensor {t['name']} truncated at byte offset {len(raw)}")
        params[t["name"]] = np.frombuffer(raw, dtype="<f8", count=n // 8, offset=off).reshape(shape).copy()
        off += n
    if off != len(raw):
        raise FormatError(f"{path}: {len(raw) - off} trailing bytes after byte offset {off}")
    cfg = Config.from_dict(header["config"])
    return TDConvED(cfg, len(vocab), params), vocab
