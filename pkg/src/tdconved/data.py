"""Feature/caption ingestion, batching, and the synthetic copy task.

``.tdfe`` layout (all little-endian):

    offset 0   4 bytes   magic b"TDFE"
    offset 4   u32       rows (frames)
    offset 8   u32       cols (feature dim)
    offset 12  f32[rows*cols], row-major

Caption files are JSON lines, one ``{"video_id": ..., "caption": ...}``
object per line.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

from . import numcore as nc
from .errors import FormatError
from .vocab import BOS, EOS, PAD, Vocabulary, tokenize

MAGIC = b"TDFE"
_HEADER = struct.Struct("<4sII")


# ---------------------------------------------------------------------------
# feature files
# ---------------------------------------------------------------------------


def write_tdfe(path, matrix: np.ndarray) -> None:
    m = np.asarray(matrix)
    if m.ndim != 2:
        raise FormatError(f"feature matrix must be 2-D, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise FormatError("feature matrix has non-finite values")
    with open(path, "wb") as f:
        f.write(_HEADER.pack(MAGIC, m.shape[0], m.shape[1]))
        f.write(np.ascontiguousarray(m, dtype="<f4").tobytes())


def read_tdfe(path) -> np.ndarray:
    """Read one feature file as a float32 (rows, cols) array."""
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise FormatError(f"{path}: truncated header at byte offset {len(raw)} (need {_HEADER.size})")
    magic, rows, cols = _HEADER.unpack_from(raw, 0)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r} at byte offset 0")
    need = _HEADER.size + 4 * rows * cols
    if len(raw) != need:
        raise FormatError(
            f"{path}: payload ends at byte offset {len(raw)}, expected {need} for {rows}x{cols} floats"
        )
    return np.frombuffer(raw, dtype="<f4", offset=_HEADER.size).reshape(rows, cols).copy()


def load_features(path) -> dict[str, np.ndarray]:
    """Map video id -> feature matrix, from a directory of ``<id>.tdfe`` files or a single file."""
    p = Path(path)
    files = sorted(p.glob("*.tdfe")) if p.is_dir() else [p]
    return {f.stem: read_tdfe(f) for f in files}


# ---------------------------------------------------------------------------
# captions
# ---------------------------------------------------------------------------


def write_captions(path, records: Iterable[tuple[str, str]]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for vid, cap in records:
            f.write(json.dumps({"video_id": vid, "caption": cap}, ensure_ascii=False) + "\n")


def read_captions(path) -> list[tuple[str, str]]:
    out = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                out.append((rec["video_id"], rec["caption"]))
            except (json.JSONDecodeError, KeyError, TypeError) as e:
                raise FormatError(f"{path}:{lineno}: bad caption record ({e})") from None
    return out


# ---------------------------------------------------------------------------
# samples and batches
# ---------------------------------------------------------------------------


@dataclass
class Sample:
    video_id: str
    features: np.ndarray  # (N_v, D_v)
    caption: str


@dataclass
class SequenceBatch:
    features: np.ndarray  # (B, N_v, D_v)
    token_in: np.ndarray  # (B, T), starts with <s>
    token_out: np.ndarray  # (B, T), <e> at lengths-1, <p> after
    lengths: np.ndarray  # (B,)
    indices: np.ndarray  # dataset positions of the items

    def __len__(self) -> int:
        return len(self.lengths)


def load_dataset(captions_path, features_dir) -> list[Sample]:
    feats = load_features(features_dir)
    out = []
    for vid, cap in read_captions(captions_path):
        if vid not in feats:
            raise FormatError(f"{captions_path}: no feature file for video {vid!r}")
        out.append(Sample(vid, feats[vid].astype(np.float64), cap))
    return out


def encode_caption(caption: str, vocab: Vocabulary, max_words: int | None = None) -> list[int]:
    ids = vocab.encode(tokenize(caption))
    return ids[:max_words] if max_words is not None else ids


def collate(samples: list[Sample], vocab: Vocabulary, indices=None, max_words: int | None = None) -> SequenceBatch:
    seqs = [encode_caption(s.caption, vocab, max_words) for s in samples]
    lengths = np.array([len(s) + 1 for s in seqs])
    T = int(lengths.max())
    B = len(samples)
    token_in = np.full((B, T), PAD, dtype=np.int64)
    token_out = np.full((B, T), PAD, dtype=np.int64)
    for b, ids in enumerate(seqs):
        token_in[b, : len(ids) + 1] = [BOS] + ids
        token_out[b, : len(ids) + 1] = ids + [EOS]
    shapes = {s.features.shape for s in samples}
    if len(shapes) != 1:
        raise FormatError(f"batch mixes feature shapes {sorted(shapes)}; all videos need the same N_v x D_v")
    features = np.stack([s.features for s in samples]).astype(np.float64)
    idx = np.arange(B) if indices is None else np.asarray(indices)
    return SequenceBatch(features, token_in, token_out, lengths, idx)


def make_batches(
    dataset: list[Sample], vocab: Vocabulary, batch_size: int, seed: int | None,
    max_words: int | None = None,
) -> list[SequenceBatch]:
    """Shuffle with ``seed`` (None keeps order), cut into batches; the last one may be short."""
    n = len(dataset)
    order = np.arange(n) if seed is None else nc.Rng(seed).permutation(n)
    return [
        collate([dataset[i] for i in order[s : s + batch_size]], vocab, order[s : s + batch_size], max_words)
        for s in range(0, n, batch_size)
    ]


# ---------------------------------------------------------------------------
# synthetic copy task
# ---------------------------------------------------------------------------


def synth_word(i: int) -> str:
    return f"w{i}"


def synth_table(seed: int, vocab_size: int, d_v: int) -> np.ndarray:
    """The fixed per-token feature embedding used by ``synth_copy_task``."""
    return nc.Rng(seed).normal((vocab_size, d_v))


def synth_copy_task(
    seed: int, n_samples: int, vocab_size: int, seq_len: int, d_v: int, noise: float = 0.0,
) -> list[Sample]:
    """Frame i carries the embedding of caption word i plus Gaussian noise of std ``noise``.

    ``vocab_size`` counts caption words (w0 .. w{vocab_size-1}); the
    model vocabulary adds the reserved tokens on top.
    """
    rng = nc.Rng(seed)
    table = synth_table(int(rng.next_u64(1)[0]), vocab_size, d_v)
    words = rng.integers(0, vocab_size, (n_samples, seq_len))
    noise_rng = rng.split()
    out = []
    for n in range(n_samples):
        feats = table[words[n]]
        if noise > 0:
            feats = feats + noise_rng.normal(feats.shape, scale=noise)
        out.append(Sample(f"vid{n:05d}", feats, " ".join(synth_word(w) for w in words[n])))
    return out
