"""TDConvED assembly: parameters, teacher-forced forward/backward, loss, and
greedy / beam-search decoding.

Variants:
  td1   projection + mean pooling (no deformable blocks), no attention
  td2   deformable encoder, no attention
  full  deformable encoder + temporal attention

The output head computes ``logits_t = W_o (h_t + W_c zhat_t + b_c) + b_o`` for
``full`` and ``W_o h_t + b_o`` otherwise.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import numcore as nc
from .attention import AttentionParams, attend_backward, attend_forward
from .config import Config
from .decoder import (
    DecoderParams,
    IncrementalState,
    ShiftedConvParams,
    decode_hidden_backward,
    decode_hidden_forward,
    decode_step,
)
from .encoder import EncoderParams, encode_backward, encode_forward, mean_pool, mean_pool_backward
from .errors import ShapeError
from .tdconv import DeformConvParams
from .vocab import BOS, EOS, PAD

BANNED = (PAD, BOS)


# ---------------------------------------------------------------------------
# parameter naming
# ---------------------------------------------------------------------------


def init_params(cfg: Config, vocab_size: int, rng: nc.Rng) -> dict[str, np.ndarray]:
    """Fresh parameters keyed by stable names; draw order is fixed so seeds reproduce bitwise."""
    n_enc = 0 if cfg.variant == "td1" else cfg.num_enc_blocks
    enc = EncoderParams.init(rng, cfg.d_v, cfg.d_r, cfg.k, n_enc)
    dec = DecoderParams.init(rng, vocab_size, cfg.t_max, cfg.d_r, cfg.d_w, cfg.d_f, cfg.k, cfg.num_dec_blocks)
    params = {}
    params.update(_flatten_encoder(enc))
    params.update(_flatten_decoder(dec))
    if cfg.variant == "full":
        att = AttentionParams.init(rng, cfg.d_r, cfg.d_f, cfg.d_a)
        params.update(_flatten_attention(att))
        params["head.video.W"] = nc.init_uniform(rng, (cfg.d_f, cfg.d_r), cfg.d_r)
        params["head.video.b"] = np.zeros(cfg.d_f)
    params["head.out.W"] = nc.init_uniform(rng, (vocab_size, cfg.d_f), cfg.d_f)
    params["head.out.b"] = np.zeros(vocab_size)
    return params


def _flatten_encoder(enc: EncoderParams) -> dict:
    out = {"enc.proj.W": enc.W_in, "enc.proj.b": enc.b_in}
    for l, blk in enumerate(enc.blocks):
        for name, arr in blk._asdict().items():
            out[f"enc.block{l}.{name}"] = arr
    return out


def _flatten_decoder(dec: DecoderParams) -> dict:
    out = {
        "dec.word_emb": dec.word_emb,
        "dec.pos_emb": dec.pos_emb,
        "dec.video.W": dec.W_i,
        "dec.video.b": dec.b_i,
        "dec.proj.W": dec.W_in,
        "dec.proj.b": dec.b_in,
    }
    for l, blk in enumerate(dec.blocks):
        out[f"dec.block{l}.W"] = blk.W
        out[f"dec.block{l}.b"] = blk.b
    return out


def _flatten_attention(att: AttentionParams) -> dict:
    return {f"att.{name}": arr for name, arr in att._asdict().items()}


def _count_blocks(params: dict, prefix: str) -> int:
    n = 0
    while any(k.startswith(f"{prefix}{n}.") for k in params):
        n += 1
    return n


def encoder_view(params: dict) -> EncoderParams:
    blocks = tuple(
        DeformConvParams(*(params[f"enc.block{l}.{n}"] for n in DeformConvParams._fields))
        for l in range(_count_blocks(params, "enc.block"))
    )
    return EncoderParams(params["enc.proj.W"], params["enc.proj.b"], blocks)


def decoder_view(params: dict) -> DecoderParams:
    blocks = tuple(
        ShiftedConvParams(params[f"dec.block{l}.W"], params[f"dec.block{l}.b"])
        for l in range(_count_blocks(params, "dec.block"))
    )
    return DecoderParams(
        params["dec.word_emb"], params["dec.pos_emb"], params["dec.video.W"], params["dec.video.b"],
        params["dec.proj.W"], params["dec.proj.b"], blocks,
    )


def attention_view(params: dict) -> AttentionParams | None:
    if "att.W_a" not in params:
        return None
    return AttentionParams(*(params[f"att.{n}"] for n in AttentionParams._fields))


# ---------------------------------------------------------------------------
# loss
# ---------------------------------------------------------------------------


def sequence_loss(logits: np.ndarray, targets: np.ndarray, pad_index: int = PAD) -> float:
    """Summed cross entropy over non-pad target positions."""
    targets = np.asarray(targets)
    if logits.shape[:-1] != targets.shape:
        raise ShapeError(f"sequence_loss: logits {logits.shape} vs targets {targets.shape}")
    return nc.masked_cross_entropy(logits, targets, targets != pad_index)[0]


# ---------------------------------------------------------------------------
# beam search
# ---------------------------------------------------------------------------


@dataclass
class Hypothesis:
    tokens: list[int]
    logp: float
    state: object = None
    finished: bool = False
    attention: list = field(default_factory=list)


StepFn = Callable[[list[int], int, list], tuple[np.ndarray, list, list]]


def beam_search_core(
    step: StepFn,
    start_state,
    beam: int,
    max_len: int,
    eos: int = EOS,
    start_token: int = BOS,
) -> Hypothesis:
    """Generic beam search.

    ``step(last_tokens, t, states)`` returns (log-probabilities (H, V), new
    states, attention rows) for the H live hypotheses. Candidates are ranked by
    summed log-probability, ties broken by token index then hypothesis order.
    Hypotheses ending in ``eos`` retire to a pool; the pool (plus whatever is
    still live at ``max_len``) is ranked by raw total log-probability.
    """
    if beam < 1:
        raise ValueError("beam must be >= 1")
    live = [Hypothesis([], 0.0, start_state)]
    pool: list[Hypothesis] = []
    for t in range(max_len):
        last = [h.tokens[-1] if h.tokens else start_token for h in live]
        logp, states, attn = step(last, t, [h.state for h in live])
        H, V = logp.shape
        scores = np.array([h.logp for h in live])[:, None] + logp
        hyp_idx = np.repeat(np.arange(H), V)
        tok_idx = np.tile(np.arange(V), H)
        flat = scores.reshape(-1)
        order = np.lexsort((hyp_idx, tok_idx, -flat))
        order = [o for o in order if np.isfinite(flat[o])][:beam]
        new_live = []
        for o in order:
            i, j = int(hyp_idx[o]), int(tok_idx[o])
            prev = live[i]
            hyp = Hypothesis(prev.tokens + [j], float(flat[o]), states[i], j == eos,
                             prev.attention + ([attn[i]] if attn is not None else []))
            (pool if hyp.finished else new_live).append(hyp)
        live = new_live
        if not live:
            break
    pool.extend(live)
    if not pool:
        return Hypothesis([], 0.0, start_state)
    best = 0
    for n, h in enumerate(pool):
        if h.logp > pool[best].logp:
            best = n
    return pool[best]


# ---------------------------------------------------------------------------
# model
# ---------------------------------------------------------------------------


@dataclass
class DecodeResult:
    tokens: list[int]  # without the end token
    logp: float
    attention: np.ndarray | None  # (len(tokens), N_v) rows, full variant only


class TDConvED:
    def __init__(self, cfg: Config, vocab_size: int, params: dict | None = None, seed: int | None = None):
        self.cfg = cfg
        self.vocab_size = vocab_size
        if params is None:
            params = init_params(cfg, vocab_size, nc.Rng(cfg.seed if seed is None else seed))
        self.params = params

    @property
    def has_attention(self) -> bool:
        return "att.W_a" in self.params

    def num_parameters(self) -> int:
        return sum(p.size for p in self.params.values())

    # ---------------- encoder ----------------

    def encode(self, features: np.ndarray):
        """Returns (z, z_mean)."""
        z, _ = encode_forward(features, encoder_view(self.params))
        return z, mean_pool(z)

    # ---------------- teacher forcing ----------------

    def forward_train(self, features: np.ndarray, token_in: np.ndarray):
        """features (B, N, D_v), token_in (B, T) -> (logits (B, T, V), cache).

        Every position is computed in one pass; no step depends on another
        step's output.
        """
        p = self.params
        z, ecache = encode_forward(features, encoder_view(p))
        z_mean = mean_pool(z)
        h, dcache = decode_hidden_forward(token_in, z_mean, decoder_view(p))
        cache = dict(ecache=ecache, dcache=dcache, z=z, h=h)
        c = h
        if self.has_attention:
            lam, zhat, acache = attend_forward(z, h, attention_view(p))
            c = h + nc.linear_forward(zhat, p["head.video.W"], p["head.video.b"])
            cache.update(acache=acache, zhat=zhat, lam=lam)
        logits = nc.linear_forward(c, p["head.out.W"], p["head.out.b"])
        cache["c"] = c
        return logits, cache

    def backward(self, glogits: np.ndarray, cache) -> dict[str, np.ndarray]:
        p = self.params
        grads: dict[str, np.ndarray] = {}
        gc, grads["head.out.W"], grads["head.out.b"] = nc.linear_backward(glogits, cache["c"], p["head.out.W"])
        gh = gc
        z = cache["z"]
        gz = np.zeros_like(z)
        if self.has_attention:
            gzhat, grads["head.video.W"], grads["head.video.b"] = nc.linear_backward(
                gc, cache["zhat"], p["head.video.W"]
            )
            gz_a, gh_a, gatt = attend_backward(gzhat, cache["acache"], attention_view(p))
            gz += gz_a
            gh = gh + gh_a
            grads.update(_flatten_attention(gatt))
        gz_mean, gdec = decode_hidden_backward(gh, cache["dcache"], decoder_view(p))
        grads.update(_flatten_decoder(gdec))
        gz += mean_pool_backward(gz_mean, z.shape[-2])
        _, genc = encode_backward(gz, cache["ecache"], encoder_view(p))
        grads.update(_flatten_encoder(genc))
        return {name: grads[name] for name in p}

    def loss_and_grads(self, features, token_in, token_out):
        """Summed loss, non-pad token count, and summed gradients for one chunk."""
        logits, cache = self.forward_train(features, token_in)
        mask = token_out != PAD
        loss, glogits = nc.masked_cross_entropy(logits, token_out, mask)
        return loss, int(mask.sum()), self.backward(glogits, cache)

    def total_loss(self, features, token_in, token_out) -> float:
        logits, _ = self.forward_train(features, token_in)
        return sequence_loss(logits, token_out)

    # ---------------- inference ----------------

    def _head(self, h: np.ndarray, z: np.ndarray):
        p = self.params
        lam = None
        c = h
        if self.has_attention:
            lam, zhat, _ = attend_forward(z, h[..., None, :], attention_view(p))
            lam = lam[..., 0, :]
            c = h + nc.linear_forward(zhat[..., 0, :], p["head.video.W"], p["head.video.b"])
        return nc.linear_forward(c, p["head.out.W"], p["head.out.b"]), lam

    def step_logits(self, token, t: int, z: np.ndarray, z_mean: np.ndarray, state: IncrementalState):
        """One incremental decoding step -> (logits, attention row or None, new state)."""
        h, state = decode_step(token, t, z_mean, state, decoder_view(self.params))
        logits, lam = self._head(h, z)
        return logits, lam, state

    @staticmethod
    def _masked_logp(logits: np.ndarray) -> np.ndarray:
        logits = logits.copy()
        logits[..., list(BANNED)] = -np.inf
        return nc.log_softmax(logits)

    def greedy_decode(self, features: np.ndarray, max_len: int | None = None) -> list[DecodeResult]:
        """Batched greedy decoding for features (B, N, D_v) (or a single (N, D_v))."""
        single = features.ndim == 2
        feats = features[None] if single else features
        max_len = self.cfg.max_len if max_len is None else max_len
        B = feats.shape[0]
        z, z_mean = self.encode(feats)
        state = IncrementalState.initial(decoder_view(self.params), (B,))
        tok = np.full(B, BOS)
        out = [[] for _ in range(B)]
        attn = [[] for _ in range(B)]
        logp = np.zeros(B)
        done = np.zeros(B, dtype=bool)
        for t in range(max_len):
            logits, lam, state = self.step_logits(tok, t, z, z_mean, state)
            lp = self._masked_logp(logits)
            tok = np.argmax(lp, axis=-1)
            for b in range(B):
                if done[b]:
                    continue
                logp[b] += lp[b, tok[b]]
                if tok[b] == EOS:
                    done[b] = True
                else:
                    out[b].append(int(tok[b]))
                    if lam is not None:
                        attn[b].append(lam[b])
            if done.all():
                break
        results = [
            DecodeResult(out[b], float(logp[b]), np.array(attn[b]).reshape(-1, z.shape[-2]) if self.has_attention else None)
            for b in range(B)
        ]
        return results[0] if single else results

    def beam_search(self, features: np.ndarray, beam: int | None = None, max_len: int | None = None) -> DecodeResult:
        """Beam search for a single video (N, D_v)."""
        beam = self.cfg.beam if beam is None else beam
        max_len = self.cfg.max_len if max_len is None else max_len
        z, z_mean = self.encode(features[None])
        dec = decoder_view(self.params)

        def step(last, t, states):
            H = len(last)
            batched = IncrementalState(
                tuple(np.stack([s.buffers[l] for s in states]) for l in range(len(dec.blocks))), t
            )
            zz = np.broadcast_to(z, (H,) + z.shape[1:])
            zm = np.broadcast_to(z_mean, (H,) + z_mean.shape[1:])
            logits, lam, new = self.step_logits(np.array(last), t, zz, zm, batched)
            new_states = [new.select(i) for i in range(H)]
            return self._masked_logp(logits), new_states, (list(lam) if lam is not None else None)

        best = beam_search_core(step, IncrementalState.initial(dec), beam, max_len)
        tokens = best.tokens[:-1] if best.finished else best.tokens
        attn = None
        if self.has_attention:
            attn = np.array(best.attention[: len(tokens)]).reshape(-1, z.shape[-2])
        return DecodeResult(tokens, best.logp, attn)

    def sequence_logp(self, features: np.ndarray, tokens: list[int]) -> float:
        """Total masked log-probability of an emitted token sequence, via teacher forcing."""
        token_in = np.array([[BOS] + list(tokens[:-1])]) if tokens else None
        if token_in is None:
            return 0.0
        logits, _ = self.forward_train(features[None], token_in)
        lp = self._masked_logp(logits[0])
        return float(sum(lp[t, w] for t, w in enumerate(tokens)))
