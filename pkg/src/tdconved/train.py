"""Teacher-forced training and evaluation."""

from __future__ import annotations

import logging
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import numcore as nc
from .config import Config
from .data import Sample, SequenceBatch, make_batches
from .errors import ConfigError
from .metrics import EvalPair, bleu4
from .model import TDConvED
from .vocab import PAD, Vocabulary, tokenize

log = logging.getLogger(__name__)


@dataclass
class EpochRecord:
    epoch: int
    loss: float  # mean per-token cross entropy over the epoch
    tokens: int

    def line(self) -> str:
        return f"epoch={self.epoch} loss={self.loss:.10f} tokens={self.tokens}"


def batch_grads(model: TDConvED, batch: SequenceBatch, chunk: int, threads: int = 1):
    """Summed loss, token count and summed grads over a batch.

    The batch is always cut into the same fixed-size chunks and the chunk
    results are added in chunk order, so the result does not depend on
    ``threads``.
    """
    spans = [(s, min(s + chunk, len(batch))) for s in range(0, len(batch), chunk)]

    def run(span):
        a, b = span
        return model.loss_and_grads(batch.features[a:b], batch.token_in[a:b], batch.token_out[a:b])

    if threads > 1 and len(spans) > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            results = list(ex.map(run, spans))
    else:
        results = [run(s) for s in spans]
    loss, ntok, grads = results[0]
    grads = {k: v.copy() for k, v in grads.items()}
    for l, n, g in results[1:]:
        loss += l
        ntok += n
        for k in grads:
            grads[k] += g[k]
    return loss, ntok, grads


def train(
    model: TDConvED,
    dataset: list[Sample],
    vocab: Vocabulary,
    cfg: Config,
    on_epoch: Callable[[EpochRecord], None] | None = None,
) -> list[EpochRecord]:
    """Adam on the per-batch mean token loss; batches reshuffled every epoch from ``cfg.seed``."""
    if not dataset:
        raise ConfigError("train: empty dataset")
    opt = nc.Adam(cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
    shuffle_rng = nc.Rng(cfg.seed + 1)
    history = []
    for epoch in range(1, cfg.epochs + 1):
        batches = make_batches(dataset, vocab, cfg.batch_size, int(shuffle_rng.next_u64(1)[0]),
                               max_words=cfg.t_max - 1)
        total, count = 0.0, 0
        for batch in batches:
            loss, ntok, grads = batch_grads(model, batch, cfg.grad_chunk, cfg.threads)
            if ntok == 0:
                continue
            for g in grads.values():
                g /= ntok
            opt.step(model.params, grads)
            total += loss
            count += ntok
        rec = EpochRecord(epoch, total / max(count, 1), count)
        history.append(rec)
        log.info(rec.line())
        if on_epoch is not None:
            on_epoch(rec)
    return history


def token_accuracy(model: TDConvED, dataset: list[Sample], vocab: Vocabulary, batch_size: int = 64) -> float:
    """Teacher-forced next-token accuracy over non-pad targets."""
    hit = tot = 0
    for batch in make_batches(dataset, vocab, batch_size, None, max_words=model.cfg.t_max - 1):
        logits, _ = model.forward_train(batch.features, batch.token_in)
        mask = batch.token_out != PAD
        hit += int(((logits.argmax(-1) == batch.token_out) & mask).sum())
        tot += int(mask.sum())
    return hit / max(tot, 1)


def decode_dataset(model: TDConvED, dataset: list[Sample], beam: int = 1, max_len: int | None = None,
                   batch_size: int = 64):
    """Decode each distinct video once; returns {video_id: DecodeResult}."""
    videos: dict[str, np.ndarray] = {}
    for s in dataset:
        videos.setdefault(s.video_id, s.features)
    ids = list(videos)
    out = {}
    if beam == 1:
        for a in range(0, len(ids), batch_size):
            chunk = ids[a : a + batch_size]
            res = model.greedy_decode(np.stack([videos[v] for v in chunk]), max_len)
            out.update(zip(chunk, res))
    else:
        for v in ids:
            out[v] = model.beam_search(videos[v], beam, max_len)
    return out


def evaluate(model: TDConvED, dataset: list[Sample], vocab: Vocabulary, beam: int = 1,
             max_len: int | None = None) -> dict:
    refs: dict[str, list[list[str]]] = defaultdict(list)
    for s in dataset:
        refs[s.video_id].append(tokenize(s.caption))
    decoded = decode_dataset(model, dataset, beam, max_len)
    pairs = [EvalPair(vocab.decode(decoded[v].tokens), refs[v]) for v in refs]
    return {
        "bleu4": bleu4(pairs),
        "token_accuracy": token_accuracy(model, dataset, vocab),
        "videos": len(pairs),
        "beam": beam,
    }
