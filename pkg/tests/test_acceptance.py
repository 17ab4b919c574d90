"""Acceptance criteria, one reported line each (see the summary section of the pytest run)."""

import itertools
import time

import numpy as np
import pytest

from tdconved import numcore as nc
from tdconved.config import Config
from tdconved.data import synth_copy_task
from tdconved.decoder import decode_hidden
from tdconved.encoder import encode
from tdconved.metrics import EvalPair, bleu4
from tdconved.model import TDConvED, beam_search_core
from tdconved.train import evaluate, train
from tdconved.verify import bench, gradcheck, incremental_logits, random_instance, tiny_config
from tdconved.vocab import BOS, EOS, PAD, build_vocab

import oracles
from test_decoder import random_decoder
from test_encoder import random_encoder
from test_metrics import CORPUS, HAND_MATCHES, HAND_TOTALS


def test_c1_gradients(report):
    t0 = time.perf_counter()
    rows = gradcheck(tiny_config(), vocab_size=5, seed=0, steps=4)
    dt = time.perf_counter() - t0
    worst = max(rows, key=lambda r: r.max_rel_err)
    ok = all(r.passed for r in rows) and dt < 30
    report("1 gradient suite", ok, f"{len(rows)} groups, worst {worst.name} {worst.max_rel_err:.2e} (<1e-4), {dt:.1f}s")
    assert ok


def test_c2_deformable_degeneracy(report):
    rng = nc.Rng(2)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(100):
        d_v, d_r = (int(x) for x in rng.integers(1, 5, 2))
        n = int(rng.integers(1, 7))
        p = random_encoder(rng, d_v, d_r, k=int(rng.integers(0, 3)) * 2 + 1, zero_offsets=True)
        f = rng.normal((n, d_v))
        ref = np.array(oracles.encoder(f, p.W_in, p.b_in, p.blocks, deform=False))
        worst = max(worst, float(np.abs(encode(f, p) - ref).max()))
    dt = time.perf_counter() - t0
    ok = worst <= 1e-12 and dt < 10
    report("2 deformable degeneracy", ok, f"100 instances, max diff {worst:.1e} (<=1e-12), {dt:.1f}s")
    assert ok


def test_c3_causality(report):
    rng = nc.Rng(3)
    t0 = time.perf_counter()
    violations = 0
    checks = 0
    for _ in range(100):
        p = random_decoder(rng, k=int(rng.integers(1, 3)) * 2 + 1, n_blocks=int(rng.integers(1, 4)))
        T = int(rng.integers(2, 9))
        tokens = rng.integers(2, 7, T)
        tokens[0] = BOS
        zm = rng.normal(3)
        base = decode_hidden(tokens, zm, p)
        for t in range(T - 1):
            alt = tokens.copy()
            alt[t + 1 :] = (alt[t + 1 :] - 2 + 1 + rng.integers(0, 4, T - t - 1)) % 5 + 2
            h = decode_hidden(alt, zm, p)
            checks += 1
            violations += h[: t + 1].tobytes() != base[: t + 1].tobytes()
    dt = time.perf_counter() - t0
    ok = violations == 0 and dt < 10
    report("3 causality", ok, f"100 decoders, {checks} future perturbations, {violations} prefix changes, {dt:.1f}s")
    assert ok


def test_c4_parallel_incremental(report):
    rng = nc.Rng(4)
    worst = 0.0
    for i in range(50):
        variant = ("td1", "td2", "full")[i % 3]
        cfg = tiny_config(variant=variant, t_max=10, max_len=9)
        model, feats, tok_in, _ = random_instance(cfg, 6, rng, batch=2, steps=int(rng.integers(1, 11)))
        par = model.forward_train(feats, tok_in)[0]
        worst = max(worst, float(np.abs(par - incremental_logits(model, feats, tok_in)).max()))
    ok = worst <= 1e-9
    report("4 parallel/incremental", ok, f"50 instances, max diff {worst:.1e} (<=1e-9)")
    assert ok


def _enumerate(score, allowed, max_len):
    best, best_seq = -np.inf, None
    for n in range(1, max_len + 1):
        for seq in itertools.product(allowed, repeat=n):
            if EOS in seq[:-1] or (n < max_len and seq[-1] != EOS):
                continue
            s = score(list(seq))
            if s > best:
                best, best_seq = s, list(seq)
    return best_seq, best


def test_c5_beam(report):
    t0 = time.perf_counter()
    # raw search over a 3-token table
    matched = 0
    for seed in range(10):
        r = nc.Rng(seed)
        table = {pre: r.normal(3, scale=2.0) for n in range(3) for pre in itertools.product(range(3), repeat=n)}

        def step(last, t, states):
            pre = [s + [l] if t > 0 else s for s, l in zip(states, last)]
            return np.array([nc.log_softmax(table[tuple(p)]) for p in pre]), pre, None

        score = lambda s: sum(nc.log_softmax(table[tuple(s[:i])])[w] for i, w in enumerate(s))
        best_seq, best = _enumerate(score, range(3), 3)
        hyp = beam_search_core(step, [], 27, 3, eos=EOS)
        matched += hyp.tokens == best_seq and abs(hyp.logp - best) <= 1e-12
    # full model with a 3-word vocabulary
    model_ok = 0
    for seed in range(5):
        cfg = tiny_config(max_len=3, t_max=4)
        m = TDConvED(cfg, 7, seed=seed)
        for p in m.params.values():
            p[...] = nc.Rng(100 + seed).uniform(-1, 1, p.shape)
        f = nc.Rng(seed).normal((3, 4))
        allowed = [t for t in range(7) if t not in (PAD, BOS)]
        best_seq, best = _enumerate(lambda s: m.sequence_logp(f, s), allowed, 3)
        res = m.beam_search(f, len(allowed) ** 3, 3)
        expected = best_seq[:-1] if best_seq[-1] == EOS else best_seq
        model_ok += res.tokens == expected and abs(res.logp - best) <= 1e-9
    # beam=1 vs greedy
    same = 0
    for seed in range(100):
        cfg = tiny_config(variant=("td1", "td2", "full")[seed % 3], max_len=5, t_max=6)
        m = TDConvED(cfg, 8, seed=seed)
        for p in m.params.values():
            p[...] = nc.Rng(seed + 1000).uniform(-1, 1, p.shape)
        f = nc.Rng(seed).normal((3, 4))
        g, b = m.greedy_decode(f, 5), m.beam_search(f, 1, 5)
        same += g.tokens == b.tokens and abs(g.logp - b.logp) <= 1e-12
    dt = time.perf_counter() - t0
    ok = matched == 10 and model_ok == 5 and same == 100 and dt < 10
    report("5 beam correctness", ok, f"table {matched}/10, model {model_ok}/5 vs enumeration; "
                                     f"beam=1==greedy {same}/100; {dt:.1f}s")
    assert ok


def synth_split(seed, noise):
    data = synth_copy_task(seed, 2200, 20, 8, 64, noise)
    return data[:2000], data[2000:]


SYNTH_CFG = dict(d_v=64, d_r=64, d_f=64, d_a=64, d_w=64, n_v=8, t_max=10, max_len=9, epochs=30)


@pytest.mark.slow
def test_c6_end_to_end(report):
    train_set, test_set = synth_split(0, 0.0)
    vocab = build_vocab(s.caption for s in train_set)
    cfg = Config(**SYNTH_CFG)
    model = TDConvED(cfg, len(vocab))
    t0 = time.perf_counter()
    train(model, train_set, vocab, cfg)
    res = evaluate(model, test_set, vocab, beam=1, max_len=cfg.max_len)
    dt = time.perf_counter() - t0
    ok = res["token_accuracy"] >= 0.95 and res["bleu4"] >= 0.90 and dt < 900
    report("6 end-to-end learning", ok, f"held-out token acc {res['token_accuracy']:.4f} (>=0.95), "
                                       f"greedy BLEU@4 {res['bleu4']:.4f} (>=0.90), {dt:.0f}s")
    assert ok


@pytest.mark.slow
def test_c7_variant_ordering(report):
    scores = {}
    for variant in ("td1", "td2", "full"):
        for seed in range(3):
            train_set, test_set = synth_split(seed, 0.5)
            vocab = build_vocab(s.caption for s in train_set)
            cfg = Config(**SYNTH_CFG, variant=variant, seed=seed)
            model = TDConvED(cfg, len(vocab))
            train(model, train_set, vocab, cfg)
            scores.setdefault(variant, []).append(evaluate(model, test_set, vocab, 1, cfg.max_len)["bleu4"])
    mean = {v: float(np.mean(s)) for v, s in scores.items()}
    ordered = mean["full"] >= mean["td2"] >= mean["td1"]
    detail = ", ".join(f"{v} {mean[v]:.3f} [{' '.join(f'{x:.3f}' for x in scores[v])}]" for v in mean)
    # report only: the ordering is logged, not asserted
    report("7 variant ordering (report only)", True, f"BLEU@4 at noise 0.5: {detail}; "
                                                     f"full>=td2>=td1 {'holds' if ordered else 'does not hold'}")


def test_c8_bench(report):
    rep = bench(Config(t_max=32), steps=25, batch=8, repeats=5)
    ok = rep.ratio > 1.0
    report("8 benchmark", ok, f"T=25 parallel {rep.parallel_s * 1e3:.1f}ms vs sequential "
                              f"{rep.sequential_s * 1e3:.1f}ms, ratio {rep.ratio:.2f} (>1)")
    assert ok


def test_c9_bleu_oracle(report):
    expected = float(np.prod(np.array(HAND_MATCHES) / np.array(HAND_TOTALS)) ** 0.25)
    got = bleu4(CORPUS)
    self_score = bleu4([EvalPair(p.references[0], p.references) for p in CORPUS])
    ok = abs(got - expected) <= 1e-9 and self_score == 1.0
    report("9 metric oracle", ok, f"5-pair corpus {got:.12f} vs hand {expected:.12f}; self {self_score!r}")
    assert ok
