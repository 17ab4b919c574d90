import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tdconved.errors import ConfigError
from tdconved.metrics import EvalPair, bleu4, bleu_stats


def P(h, *refs):
    return EvalPair(h.split(), [r.split() for r in refs])


# Hand-counted corpus. Per pair: clipped matches / hypothesis n-grams for n = 1..4,
# hypothesis length, closest reference length.
CORPUS = [
    P("a b c d e", "a b c d f"),                  # 4/5 3/4 2/3 1/2   c=5 r=5
    P("a a a a", "a a b b", "a b a b"),           # 2/4 1/3 0/2 0/1   c=4 r=4
    P("x y z w v u", "x y z w v u"),              # 6/6 5/5 4/4 3/3   c=6 r=6
    P("p q r", "p q r s t", "p q"),               # 3/3 2/2 1/1 0/0   c=3 r=2
    P("m n o m n", "m n o p", "o m n o m n q"),   # 5/5 4/4 3/3 2/2   c=5 r=4
]
HAND_MATCHES = [20, 15, 10, 6]
HAND_TOTALS = [23, 18, 13, 8]


class TestBleu:
    def test_hand_counts(self):
        m, t, c, r = bleu_stats(CORPUS)
        assert (m, t, c, r) == (HAND_MATCHES, HAND_TOTALS, 23, 21)

    def test_hand_score(self):
        expected = (20 / 23 * 15 / 18 * 10 / 13 * 6 / 8) ** 0.25  # c >= r so no brevity penalty
        assert bleu4(CORPUS) == pytest.approx(expected, abs=1e-9)

    def test_two_pair_with_brevity(self):
        pairs = [P("a b c d", "a b c d e f"), P("a b c d e", "a b c d e")]
        # all precisions 1; c=9, r=11
        assert bleu4(pairs) == pytest.approx(math.exp(1 - 11 / 9), abs=1e-9)

    def test_self(self):
        assert bleu4([EvalPair(p.references[0], p.references) for p in CORPUS]) == 1.0

    def test_no_four_gram(self):
        assert bleu4([P("a b c d", "a b c e"), P("x y", "x y")]) == 0.0

    def test_empty(self):
        with pytest.raises(ConfigError):
            bleu4([])

    def test_needs_reference(self):
        with pytest.raises(ConfigError):
            EvalPair(["a"], [])

    def test_closest_ref_tie_prefers_shorter(self):
        _, _, _, r = bleu_stats([P("a b c", "a b", "a b c d")])
        assert r == 2

    @given(st.permutations(range(5)))
    @settings(max_examples=30, deadline=None)
    def test_order_invariant(self, perm):
        assert bleu4([CORPUS[i] for i in perm]) == pytest.approx(bleu4(CORPUS), abs=1e-15)
