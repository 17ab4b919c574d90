"""Corpus-level BLEU@4 without smoothing."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import Sequence

from .errors import ConfigError


@dataclass
class EvalPair:
    hypothesis: list[str]
    references: list[list[str]]

    def __post_init__(self):
        if not self.references:
            raise ConfigError("EvalPair needs at least one reference")


def ngrams(tokens: Sequence, n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def closest_ref_length(hyp_len: int, refs: list[list]) -> int:
    # ties go to the shorter reference
    return min((abs(len(r) - hyp_len), len(r)) for r in refs)[1]


def bleu_stats(pairs: Sequence[EvalPair], max_n: int = 4):
    """Returns (clipped matches per n, hypothesis n-gram totals per n, hyp length, ref length)."""
    matches = [0] * max_n
    totals = [0] * max_n
    hyp_len = ref_len = 0
    for pair in pairs:
        hyp = list(pair.hypothesis)
        hyp_len += len(hyp)
        ref_len += closest_ref_length(len(hyp), pair.references)
        for n in range(1, max_n + 1):
            counts = ngrams(hyp, n)
            max_ref: Counter = Counter()
            for ref in pair.references:
                max_ref |= ngrams(list(ref), n)
            matches[n - 1] += sum(min(c, max_ref[g]) for g, c in counts.items())
            totals[n - 1] += max(len(hyp) - n + 1, 0)
    return matches, totals, hyp_len, ref_len


def bleu4(pairs: Sequence[EvalPair]) -> float:
    if not pairs:
        raise ConfigError("bleu4: empty corpus")
    matches, totals, c, r = bleu_stats(pairs)
    if c == 0 or any(m == 0 for m in matches):
        return 0.0
    log_p = sum(math.log(m / t) for m, t in zip(matches, totals)) / 4.0
    bp = 1.0 if c >= r else math.exp(1.0 - r / c)
    return bp * math.exp(log_p)
