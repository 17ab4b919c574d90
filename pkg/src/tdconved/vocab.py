"""Vocabulary with fixed reserved slots and a minimal tokenizer."""

from __future__ import annotations

import hashlib
import re
from collections import Counter
from pathlib import Path
from typing import Iterable

from .errors import ConfigError, FormatError

PAD, BOS, EOS, UNK = 0, 1, 2, 3
RESERVED = ("<p>", "<s>", "<e>", "<unk>")

_PUNCT = re.compile(r"[^\w\s]")


def tokenize(text: str) -> list[str]:
    """Lowercase, drop punctuation, split on whitespace."""
    return _PUNCT.sub(" ", text.lower()).split()


class Vocabulary:
    def __init__(self, tokens: Iterable[str]):
        self.tokens: list[str] = list(tokens)
        if tuple(self.tokens[: len(RESERVED)]) != RESERVED:
            raise FormatError(f"vocabulary must start with the reserved tokens {RESERVED}")
        self.index = {t: i for i, t in enumerate(self.tokens)}
        if len(self.index) != len(self.tokens):
            raise FormatError("vocabulary tokens must be unique")

    def __len__(self) -> int:
        return len(self.tokens)

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self.tokens == other.tokens

    def encode(self, words: Iterable[str]) -> list[int]:
        return [self.index.get(w, UNK) for w in words]

    def decode(self, ids: Iterable[int]) -> list[str]:
        return [self.tokens[i] for i in ids]

    def digest(self) -> str:
        return hashlib.sha256("\n".join(self.tokens).encode("utf-8")).hexdigest()

    def save(self, path) -> None:
        Path(path).write_text("\n".join(self.tokens) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        return cls(Path(path).read_text(encoding="utf-8").splitlines())


def build_vocab(captions: Iterable[str], min_count: int = 1) -> Vocabulary:
    """Reserved tokens, then words with count >= min_count by (count desc, word asc)."""
    counts: Counter[str] = Counter()
    n = 0
    for cap in captions:
        n += 1
        counts.update(tokenize(cap))
    if n == 0 or not counts:
        raise ConfigError("build_vocab: empty caption corpus")
    words = sorted((w for w, c in counts.items() if c >= min_count and w not in RESERVED),
                   key=lambda w: (-counts[w], w))
    return Vocabulary(RESERVED + tuple(words))
