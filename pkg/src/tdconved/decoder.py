"""Causal convolutional decoder.

Input at step t: ``W_in [word_emb[w_t] + pos_emb[t] ; W_i z_mean + b_i] + b_in``.
Each shifted block sees the window (x_{t-k+1}, ..., x_t), left padded with
k-1 zero vectors, so no output depends on a later input. ``decode_step``
reproduces the teacher-forced computation one position at a time from a
per-block buffer of the last k-1 block inputs.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import numcore as nc
from .errors import CapacityError, ContractError, ShapeError
from .tdconv import sliding_windows, sliding_windows_backward
from .vocab import BOS


class ShiftedConvParams(NamedTuple):
    W: np.ndarray  # (2D, k*D)
    b: np.ndarray  # (2D,)

    @property
    def k(self) -> int:
        return self.W.shape[1] // self.dim

    @property
    def dim(self) -> int:
        return self.W.shape[0] // 2


class DecoderParams(NamedTuple):
    word_emb: np.ndarray  # (V, D_w)
    pos_emb: np.ndarray  # (T_max, D_w)
    W_i: np.ndarray  # (D_w, D_r) video map
    b_i: np.ndarray  # (D_w,)
    W_in: np.ndarray  # (D_f, 2 D_w)
    b_in: np.ndarray  # (D_f,)
    blocks: tuple[ShiftedConvParams, ...]

    @property
    def t_max(self) -> int:
        return self.pos_emb.shape[0]

    @classmethod
    def init(
        cls, rng: nc.Rng, vocab_size: int, t_max: int, d_r: int, d_w: int, d_f: int, k: int, num_blocks: int
    ) -> "DecoderParams":
        return cls(
            word_emb=nc.init_uniform(rng, (vocab_size, d_w), d_w),
            pos_emb=nc.init_uniform(rng, (t_max, d_w), d_w),
            W_i=nc.init_uniform(rng, (d_w, d_r), d_r),
            b_i=np.zeros(d_w),
            W_in=nc.init_uniform(rng, (d_f, 2 * d_w), 2 * d_w),
            b_in=np.zeros(d_f),
            blocks=tuple(
                ShiftedConvParams(nc.init_uniform(rng, (2 * d_f, k * d_f), k * d_f), np.zeros(2 * d_f))
                for _ in range(num_blocks)
            ),
        )


# ---------------------------------------------------------------------------
# input embedding
# ---------------------------------------------------------------------------


def embed_forward(tokens: np.ndarray, z_mean: np.ndarray, params: DecoderParams, start: int = 0):
    """tokens (..., T) at positions start..start+T-1, z_mean (..., D_r) -> ((..., T, D_f), cache)."""
    tokens = np.asarray(tokens, dtype=np.int64)
    T = tokens.shape[-1]
    if start + T > params.t_max:
        raise CapacityError(f"decoder: position {start + T - 1} exceeds T_max={params.t_max}")
    V = params.word_emb.shape[0]
    if np.any((tokens < 0) | (tokens >= V)):
        raise ShapeError(f"decoder: token index outside vocabulary of size {V}")
    if z_mean.shape[-1] != params.W_i.shape[1]:
        raise ShapeError(f"decoder: video vector dim {z_mean.shape[-1]} != D_r {params.W_i.shape[1]}")
    e = params.word_emb[tokens] + params.pos_emb[start : start + T]
    v = nc.linear_forward(z_mean, params.W_i, params.b_i)
    v = np.broadcast_to(v[..., None, :], e.shape)
    cat = np.concatenate([e, v], axis=-1)
    x = nc.linear_forward(cat, params.W_in, params.b_in)
    return x, dict(tokens=tokens, z_mean=z_mean, cat=cat, start=start)


def embed_backward(gx: np.ndarray, cache, params: DecoderParams):
    """Returns (gz_mean, dict of param grads)."""
    gcat, gW_in, gb_in = nc.linear_backward(gx, cache["cat"], params.W_in)
    Dw = params.word_emb.shape[1]
    ge, gv = gcat[..., :Dw], gcat[..., Dw:].sum(axis=-2)
    gword = np.zeros_like(params.word_emb)
    np.add.at(gword, cache["tokens"].reshape(-1), ge.reshape(-1, Dw))
    gpos = np.zeros_like(params.pos_emb)
    T = ge.shape[-2]
    gpos[cache["start"] : cache["start"] + T] = ge.reshape(-1, T, Dw).sum(axis=0)
    gz, gW_i, gb_i = nc.linear_backward(gv, cache["z_mean"], params.W_i)
    return gz, dict(word_emb=gword, pos_emb=gpos, W_i=gW_i, b_i=gb_i, W_in=gW_in, b_in=gb_in)


def embed_step(token, t: int, z_mean: np.ndarray, params: DecoderParams) -> np.ndarray:
    """Decoder input vector for one token at position t."""
    tok = np.asarray(token, dtype=np.int64)[..., None]
    return embed_forward(tok, z_mean, params, start=t)[0][..., 0, :]


# ---------------------------------------------------------------------------
# shifted convolution
# ---------------------------------------------------------------------------


def shifted_conv_block_forward(x: np.ndarray, params: ShiftedConvParams):
    """x (..., T, D) -> ((..., T, D), cache)."""
    D = params.dim
    if x.shape[-1] != D:
        raise ShapeError(f"shifted conv: input dim {x.shape[-1]} != block dim {D}")
    if x.shape[-2] < 1:
        raise ShapeError("shifted conv: need at least one position")
    k = params.k
    T = x.shape[-2]
    xp = np.concatenate([np.zeros(x.shape[:-2] + (k - 1, D)), x], axis=-2)
    win = sliding_windows(xp, k, T)
    o = nc.linear_forward(win, params.W, params.b)
    y = nc.glu(o) + x
    return y, dict(win=win, o=o, k=k)


def shifted_conv_block_backward(gy: np.ndarray, cache, params: ShiftedConvParams):
    go = nc.glu_backward(gy, cache["o"])
    gwin, gW, gb = nc.linear_backward(go, cache["win"], params.W)
    k = cache["k"]
    T = gy.shape[-2]
    gxp = sliding_windows_backward(gwin, k, T + k - 1)
    return gy + gxp[..., k - 1 :, :], ShiftedConvParams(gW, gb)


def shifted_conv_block(x: np.ndarray, params: ShiftedConvParams) -> np.ndarray:
    return shifted_conv_block_forward(x, params)[0]


# ---------------------------------------------------------------------------
# full decoder
# ---------------------------------------------------------------------------


def decode_hidden_forward(tokens: np.ndarray, z_mean: np.ndarray, params: DecoderParams):
    tokens = np.asarray(tokens, dtype=np.int64)
    if tokens.shape[-1] < 1 or np.any(tokens[..., 0] != BOS):
        raise ContractError("decode_hidden: token rows must begin with the start token")
    x, ecache = embed_forward(tokens, z_mean, params)
    caches = []
    for block in params.blocks:
        x, c = shifted_conv_block_forward(x, block)
        caches.append(c)
    return x, dict(embed=ecache, blocks=caches)


def decode_hidden_backward(gh: np.ndarray, cache, params: DecoderParams):
    """Returns (gz_mean, DecoderParams of grads)."""
    g = gh
    bgrads = []
    for block, c in zip(reversed(params.blocks), reversed(cache["blocks"])):
        g, gb = shifted_conv_block_backward(g, c, block)
        bgrads.append(gb)
    gz, eg = embed_backward(g, cache["embed"], params)
    return gz, DecoderParams(blocks=tuple(reversed(bgrads)), **eg)


def decode_hidden(tokens: np.ndarray, z_mean: np.ndarray, params: DecoderParams) -> np.ndarray:
    return decode_hidden_forward(tokens, z_mean, params)[0]


@dataclass(frozen=True)
class IncrementalState:
    """Last k-1 inputs of every block (zeros stand in for left padding) and the next position."""

    buffers: tuple[np.ndarray, ...]  # each (..., k-1, D_f)
    t: int = 0

    @classmethod
    def initial(cls, params: DecoderParams, batch_shape: tuple = ()) -> "IncrementalState":
        bufs = tuple(np.zeros(batch_shape + (b.k - 1, b.dim)) for b in params.blocks)
        return cls(bufs, 0)

    def select(self, idx) -> "IncrementalState":
        """Reorder/gather the leading batch axis (beam bookkeeping)."""
        return IncrementalState(tuple(b[idx] for b in self.buffers), self.t)


def decode_step(token, t: int, z_mean: np.ndarray, state: IncrementalState, params: DecoderParams):
    """Returns (h_t, new state); ``state`` is left untouched."""
    if state.t != t:
        raise ContractError(f"decode_step: state holds {state.t} steps but position {t} was requested")
    if t >= params.t_max:
        raise CapacityError(f"decoder: position {t} exceeds T_max={params.t_max}")
    x = embed_step(token, t, z_mean, params)
    new_bufs = []
    for block, buf in zip(params.blocks, state.buffers):
        win = np.concatenate([buf, x[..., None, :]], axis=-2)
        new_bufs.append(win[..., 1:, :])
        o = nc.linear_forward(win.reshape(win.shape[:-2] + (-1,)), block.W, block.b)
        x = nc.glu(o) + x
    return x, IncrementalState(tuple(new_bufs), t + 1)
