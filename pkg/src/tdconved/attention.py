"""Temporal attention of decoder states over encoder context vectors.

    a[t, i] = W_a tanh(W_z z_i + W_h h_t + b_a)
    lam[t]  = softmax_i a[t, :]
    zhat[t] = sum_i lam[t, i] z_i
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from . import numcore as nc
from .errors import ShapeError


class AttentionParams(NamedTuple):
    W_a: np.ndarray  # (1, D_a)
    W_z: np.ndarray  # (D_a, D_r)
    W_h: np.ndarray  # (D_a, D_f)
    b_a: np.ndarray  # (D_a,)

    @classmethod
    def init(cls, rng: nc.Rng, d_r: int, d_f: int, d_a: int) -> "AttentionParams":
        return cls(
            W_a=nc.init_uniform(rng, (1, d_a), d_a),
            W_z=nc.init_uniform(rng, (d_a, d_r), d_r),
            W_h=nc.init_uniform(rng, (d_a, d_f), d_f),
            b_a=np.zeros(d_a),
        )


def attend_forward(z: np.ndarray, h: np.ndarray, params: AttentionParams):
    """z (..., N, D_r), h (..., T, D_f) -> (lam (..., T, N), zhat (..., T, D_r), cache)."""
    if z.shape[-2] < 1:
        raise ShapeError("attend: need at least one context vector")
    if z.shape[-1] != params.W_z.shape[1] or h.shape[-1] != params.W_h.shape[1]:
        raise ShapeError(
            f"attend: z {z.shape} / h {h.shape} incompatible with W_z {params.W_z.shape}, W_h {params.W_h.shape}"
        )
    u = z @ params.W_z.T  # (..., N, Da)
    w = nc.linear_forward(h, params.W_h, params.b_a)  # (..., T, Da)
    th = np.tanh(u[..., None, :, :] + w[..., :, None, :])  # (..., T, N, Da)
    scores = th @ params.W_a[0]
    lam = nc.softmax(scores, axis=-1)
    zhat = lam @ z
    return lam, zhat, dict(z=z, h=h, th=th, lam=lam)


def attend_backward(gzhat: np.ndarray, cache, params: AttentionParams, glam: np.ndarray | None = None):
    """Returns (gz, gh, AttentionParams of grads)."""
    z, h, th, lam = cache["z"], cache["h"], cache["th"], cache["lam"]
    g_l = gzhat @ np.swapaxes(z, -1, -2)
    if glam is not None:
        g_l = g_l + glam
    gz = np.swapaxes(lam, -1, -2) @ gzhat
    gscores = nc.softmax_backward(g_l, lam, axis=-1)  # (..., T, N)
    Da = th.shape[-1]
    gW_a = (gscores[..., None] * th).reshape(-1, Da).sum(axis=0)[None, :]
    gpre = gscores[..., None] * params.W_a[0] * (1.0 - th * th)  # (..., T, N, Da)
    gu = gpre.sum(axis=-3)  # (..., N, Da)
    gw = gpre.sum(axis=-2)  # (..., T, Da)
    gz_u, gW_z, _ = nc.linear_backward(gu, z, params.W_z)
    gh, gW_h, gb_a = nc.linear_backward(gw, h, params.W_h)
    return gz + gz_u, gh, AttentionParams(gW_a, gW_z, gW_h, gb_a)


def attend(z: np.ndarray, h: np.ndarray, params: AttentionParams):
    """Single- or multi-step attention; returns (lam, zhat)."""
    squeeze = h.ndim == z.ndim - 1
    if squeeze:
        h = h[..., None, :]
    lam, zhat, _ = attend_forward(z, h, params)
    if squeeze:
        return lam[..., 0, :], zhat[..., 0, :]
    return lam, zhat
