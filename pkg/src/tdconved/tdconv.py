"""Temporal deformable convolution.

A block predicts one scalar offset per kernel tap from the plain window
around each center, samples the (zero-padded) input at the shifted
fractional positions by linear interpolation, and runs the sampled window
through an affine map, a GLU and a residual connection.

Sampling is expressed as a dense weight matrix ``M[j, s] = max(0, 1 - |s - pos_j|)``
over every integral position ``s`` of the padded sequence, so the gather is a
matmul and its transpose is the scatter in the backward pass. Positions are
never clamped; weight that would land outside the padded sequence is dropped.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from . import numcore as nc
from .errors import ShapeError


class DeformConvParams(NamedTuple):
    W_f: np.ndarray  # (k, k*D) offset predictor
    b_f: np.ndarray  # (k,)
    W_d: np.ndarray  # (2D, k*D) deformed convolution
    b_d: np.ndarray  # (2D,)

    @property
    def k(self) -> int:
        return self.W_f.shape[0]

    @property
    def dim(self) -> int:
        return self.W_d.shape[0] // 2

    @classmethod
    def init(cls, rng: nc.Rng, dim: int, k: int) -> "DeformConvParams":
        # offset branch starts at zero: the block begins as a plain convolution
        return cls(
            W_f=np.zeros((k, k * dim)),
            b_f=np.zeros(k),
            W_d=nc.init_uniform(rng, (2 * dim, k * dim), k * dim),
            b_d=np.zeros(2 * dim),
        )

    @classmethod
    def zeros(cls, dim: int, k: int) -> "DeformConvParams":
        return cls(np.zeros((k, k * dim)), np.zeros(k), np.zeros((2 * dim, k * dim)), np.zeros(2 * dim))

    def validate(self) -> None:
        k, D = self.k, self.dim
        if k < 1 or k % 2 == 0:
            raise ShapeError(f"deformable conv: kernel size must be odd and >= 1, got {k}")
        for name, arr, shape in (
            ("W_f", self.W_f, (k, k * D)),
            ("b_f", self.b_f, (k,)),
            ("W_d", self.W_d, (2 * D, k * D)),
            ("b_d", self.b_d, (2 * D,)),
        ):
            if arr.shape != shape:
                raise ShapeError(f"deformable conv: {name} has shape {arr.shape}, expected {shape}")


def tap_positions(k: int) -> np.ndarray:
    """Relative tap offsets -(k-1)/2 .. (k-1)/2."""
    h = k // 2
    return np.arange(-h, h + 1)


def sliding_windows(xp: np.ndarray, k: int, length: int) -> np.ndarray:
    """(..., Lp, D) -> (..., length, k*D): window starting at each position, taps concatenated."""
    return np.concatenate([xp[..., n : n + length, :] for n in range(k)], axis=-1)


def sliding_windows_backward(gwin: np.ndarray, k: int, padded_len: int) -> np.ndarray:
    length = gwin.shape[-2]
    D = gwin.shape[-1] // k
    gxp = np.zeros(gwin.shape[:-2] + (padded_len, D))
    for n in range(k):
        gxp[..., n : n + length, :] += gwin[..., n * D : (n + 1) * D]
    return gxp


def interp_weights(pos: np.ndarray, length: int) -> np.ndarray:
    """B(s, pos) = max(0, 1 - |s - pos|) for s = 0..length-1; shape pos.shape + (length,)."""
    diff = np.arange(length) - np.asarray(pos, dtype=np.float64)[..., None]
    return np.maximum(0.0, 1.0 - np.abs(diff))


def interp_weights_grad(pos: np.ndarray, length: int) -> np.ndarray:
    """dB(s, pos)/dpos: +1 for s above pos, -1 below, 0 at the kinks |s - pos| in {0, 1}."""
    diff = np.arange(length) - np.asarray(pos, dtype=np.float64)[..., None]
    inside = (np.abs(diff) > 0.0) & (np.abs(diff) < 1.0)
    return np.where(inside, np.sign(diff), 0.0)


def interp(seq: np.ndarray, pos: float) -> np.ndarray:
    """Linearly interpolate a (L, D) sequence at a real position."""
    return interp_weights(pos, seq.shape[0]) @ seq


def predict_offsets(window: np.ndarray, params: DeformConvParams) -> np.ndarray:
    """One offset per tap from a (k, D) window."""
    k = params.k
    if window.ndim != 2 or window.shape[0] != k:
        raise ShapeError(f"predict_offsets: window must hold {k} vectors, got shape {window.shape}")
    return nc.linear_forward(window.reshape(-1), params.W_f, params.b_f)


def deformable_tap(seq: np.ndarray, center: int, n: int, offsets: np.ndarray) -> np.ndarray:
    """Sample tap ``n`` (1-based) of the window centred at ``center``, shifted by its offset."""
    k = len(offsets)
    if not 1 <= n <= k:
        raise ShapeError(f"deformable_tap: tap index {n} outside 1..{k}")
    return interp(seq, center + tap_positions(k)[n - 1] + offsets[n - 1])


def _as_batch(x: np.ndarray) -> tuple[np.ndarray, bool]:
    if x.ndim == 2:
        return x[None], True
    if x.ndim == 3:
        return x, False
    raise ShapeError(f"expected (L, D) or (B, L, D) input, got shape {x.shape}")


def deform_conv_block_forward(x: np.ndarray, params: DeformConvParams):
    """Returns (y, cache) for input x of shape (L, D) or (B, L, D)."""
    params.validate()
    xb, squeeze = _as_batch(x)
    B, L, D = xb.shape
    if D != params.dim:
        raise ShapeError(f"deformable conv: input dim {D} != block dim {params.dim}")
    k = params.k
    h = k // 2
    Lp = L + 2 * h
    xp = np.zeros((B, Lp, D))
    xp[:, h : h + L] = xb

    win = sliding_windows(xp, k, L)  # (B, L, kD)
    offsets = nc.linear_forward(win, params.W_f, params.b_f)  # (B, L, k)
    # padded coordinates: center i sits at i + h, tap n at i + h + r_n = i + n
    pos = np.arange(L)[:, None] + np.arange(k)[None, :] + offsets
    M = interp_weights(pos, Lp).reshape(B, L * k, Lp)
    sampled = (M @ xp).reshape(B, L, k * D)
    o = nc.linear_forward(sampled, params.W_d, params.b_d)  # (B, L, 2D)
    y = nc.glu(o) + xb
    cache = dict(params=params, xp=xp, win=win, pos=pos, M=M, sampled=sampled, o=o, squeeze=squeeze)
    return (y[0] if squeeze else y), cache


def deform_conv_block_backward(gy: np.ndarray, cache) -> tuple[np.ndarray, DeformConvParams]:
    params: DeformConvParams = cache["params"]
    xp, M, pos = cache["xp"], cache["M"], cache["pos"]
    gyb = gy[None] if cache["squeeze"] else gy
    B, Lp, D = xp.shape
    k = params.k
    h = k // 2
    L = Lp - 2 * h

    go = nc.glu_backward(gyb, cache["o"])
    gsampled, gW_d, gb_d = nc.linear_backward(go, cache["sampled"], params.W_d)
    gS = gsampled.reshape(B, L * k, D)
    gxp = M.transpose(0, 2, 1) @ gS
    dM = interp_weights_grad(pos, Lp).reshape(B, L * k, Lp)
    gpos = (dM * (gS @ xp.transpose(0, 2, 1))).sum(axis=-1).reshape(B, L, k)
    gwin, gW_f, gb_f = nc.linear_backward(gpos, cache["win"], params.W_f)
    gxp += sliding_windows_backward(gwin, k, Lp)
    gx = gyb + gxp[:, h : h + L]
    grads = DeformConvParams(gW_f, gb_f, gW_d, gb_d)
    return (gx[0] if cache["squeeze"] else gx), grads


def deform_conv_block(x: np.ndarray, params: DeformConvParams) -> np.ndarray:
    return deform_conv_block_forward(x, params)[0]


def sampling_positions(x: np.ndarray, params: DeformConvParams) -> np.ndarray:
    """Fractional sampling positions (padded coordinates) the block would use for ``x``."""
    return deform_conv_block_forward(x, params)[1]["pos"]
