"""Encoder: affine projection of frame features followed by stacked
temporal deformable convolution blocks, plus mean pooling."""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from . import numcore as nc
from .errors import ContractError, ShapeError
from .tdconv import DeformConvParams, deform_conv_block_backward, deform_conv_block_forward


class EncoderParams(NamedTuple):
    W_in: np.ndarray  # (D_r, D_v)
    b_in: np.ndarray  # (D_r,)
    blocks: tuple[DeformConvParams, ...]

    @classmethod
    def init(cls, rng: nc.Rng, d_v: int, d_r: int, k: int, num_blocks: int) -> "EncoderParams":
        W = nc.init_uniform(rng, (d_r, d_v), d_v)
        blocks = tuple(DeformConvParams.init(rng, d_r, k) for _ in range(num_blocks))
        return cls(W, np.zeros(d_r), blocks)


def encode_forward(features: np.ndarray, params: EncoderParams):
    """features (N_v, D_v) or (B, N_v, D_v) -> (z, cache)."""
    if features.ndim not in (2, 3):
        raise ShapeError(f"encode: features must be (N_v, D_v) or (B, N_v, D_v), got {features.shape}")
    if features.shape[-2] < 1:
        raise ShapeError("encode: need at least one frame")
    if features.shape[-1] != params.W_in.shape[1]:
        raise ShapeError(
            f"encode: feature dim {features.shape[-1]} != expected D_v {params.W_in.shape[1]}"
        )
    x = nc.linear_forward(features, params.W_in, params.b_in)
    caches = []
    for block in params.blocks:
        x, c = deform_conv_block_forward(x, block)
        caches.append(c)
    return x, dict(features=features, blocks=caches)


def encode_backward(gz: np.ndarray, cache, params: EncoderParams):
    """Returns (gfeatures, EncoderParams of grads)."""
    g = gz
    block_grads = []
    for c in reversed(cache["blocks"]):
        g, gb = deform_conv_block_backward(g, c)
        block_grads.append(gb)
    gfeat, gW, gb_in = nc.linear_backward(g, cache["features"], params.W_in)
    return gfeat, EncoderParams(gW, gb_in, tuple(reversed(block_grads)))


def encode(features: np.ndarray, params: EncoderParams) -> np.ndarray:
    return encode_forward(features, params)[0]


def mean_pool(z: np.ndarray) -> np.ndarray:
    """Mean over the frame axis (second to last)."""
    if z.ndim < 2 or z.shape[-2] == 0:
        raise ContractError("mean_pool: need at least one context vector")
    return z.mean(axis=-2)


def mean_pool_backward(g: np.ndarray, n: int) -> np.ndarray:
    return np.repeat(g[..., None, :] / n, n, axis=-2)
