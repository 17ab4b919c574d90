"""Numeric core: forward/backward primitives, Adam, a seeded RNG, and a
finite-difference gradient oracle.

All arrays are float64 numpy arrays. Every forward op works on arbitrary
leading (batch) axes; its ``*_backward`` companion takes the upstream
gradient plus whatever the forward needs and returns input/parameter grads.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ShapeError

Tensor = np.ndarray

_MASK64 = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)


class Rng:
    """Counter-based splitmix64 generator.

    The i-th output (i = 1, 2, ...) after seeding with ``s`` is
    ``mix(s + i * 0x9E3779B97F4A7C15 mod 2**64)`` where

        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
        z = (z ^ (z >> 27)) * 0x94D049BB133111EB
        z =  z ^ (z >> 31)

    with all arithmetic modulo 2**64. Floats take the top 53 bits. The stream
    is therefore identical on every platform and can be drawn in bulk.
    """

    def __init__(self, seed: int):
        self.state = int(seed) & _MASK64

    def next_u64(self, n: int) -> np.ndarray:
        idx = np.arange(1, n + 1, dtype=np.uint64)
        z = np.uint64(self.state) + idx * np.uint64(_GAMMA)
        self.state = (self.state + n * _GAMMA) & _MASK64
        z = (z ^ (z >> np.uint64(30))) * _MIX1
        z = (z ^ (z >> np.uint64(27))) * _MIX2
        return z ^ (z >> np.uint64(31))

    def split(self) -> "Rng":
        return Rng(int(self.next_u64(1)[0]))

    def random(self, shape=()) -> np.ndarray:
        n = int(np.prod(shape, dtype=np.int64))
        bits = self.next_u64(n) >> np.uint64(11)
        return (bits.astype(np.float64) * 2.0**-53).reshape(shape)

    def uniform(self, low: float, high: float, shape=()) -> np.ndarray:
        return low + (high - low) * self.random(shape)

    def normal(self, shape=(), scale: float = 1.0) -> np.ndarray:
        # Box-Muller on two uniform streams
        u1 = 1.0 - self.random(shape)
        u2 = self.random(shape)
        return scale * np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)

    def integers(self, low: int, high: int, shape=()) -> np.ndarray:
        return low + np.floor(self.random(shape) * (high - low)).astype(np.int64)

    def permutation(self, n: int) -> np.ndarray:
        return np.argsort(self.next_u64(n), kind="stable")


def init_uniform(rng: Rng, shape: tuple, fan_in: int) -> np.ndarray:
    bound = np.sqrt(1.0 / fan_in)
    return rng.uniform(-bound, bound, shape)


# ---------------------------------------------------------------------------
# affine maps
# ---------------------------------------------------------------------------


def linear_forward(x: Tensor, W: Tensor, b: Tensor | None = None) -> Tensor:
    """y = W x + b over the last axis of ``x``."""
    if W.ndim != 2 or x.shape[-1] != W.shape[1]:
        raise ShapeError(f"linear: input shape {x.shape} incompatible with weight shape {W.shape}")
    if b is not None and b.shape != (W.shape[0],):
        raise ShapeError(f"linear: bias shape {b.shape} incompatible with weight shape {W.shape}")
    y = x @ W.T
    if b is not None:
        y = y + b
    return y


def linear_backward(gy: Tensor, x: Tensor, W: Tensor):
    """Returns (gx, gW, gb), summing parameter grads over all leading axes."""
    gx = gy @ W
    gy2 = gy.reshape(-1, gy.shape[-1])
    x2 = x.reshape(-1, x.shape[-1])
    return gx, gy2.T @ x2, gy2.sum(axis=0)


# ---------------------------------------------------------------------------
# nonlinearities
# ---------------------------------------------------------------------------


def sigmoid(x: Tensor) -> Tensor:
    # split by sign so exp never overflows
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def glu(o: Tensor) -> Tensor:
    """Gated linear unit: split the last axis into halves [A, B], return A * sigmoid(B)."""
    d2 = o.shape[-1]
    if d2 % 2:
        raise ShapeError(f"glu: feature extent must be even, got {d2}")
    a, b = o[..., : d2 // 2], o[..., d2 // 2 :]
    return a * sigmoid(b)


def glu_backward(gy: Tensor, o: Tensor) -> Tensor:
    d = o.shape[-1] // 2
    a, b = o[..., :d], o[..., d:]
    s = sigmoid(b)
    return np.concatenate([gy * s, gy * a * s * (1.0 - s)], axis=-1)


def softmax(v: Tensor, axis: int = -1) -> Tensor:
    e = np.exp(v - v.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def softmax_backward(gy: Tensor, y: Tensor, axis: int = -1) -> Tensor:
    return y * (gy - (gy * y).sum(axis=axis, keepdims=True))


def log_softmax(v: Tensor, axis: int = -1) -> Tensor:
    m = v.max(axis=axis, keepdims=True)
    s = v - m
    return s - np.log(np.exp(s).sum(axis=axis, keepdims=True))


def cross_entropy(logits: Tensor, target) -> float:
    """-log softmax(logits)[target] for a single logit vector."""
    V = logits.shape[-1]
    if not 0 <= int(target) < V:
        raise IndexError(f"cross_entropy: target {target} out of range for {V} classes")
    return float(-log_softmax(logits)[int(target)])


def cross_entropy_backward(logits: Tensor, target) -> Tensor:
    g = softmax(logits)
    g[int(target)] -= 1.0
    return g


def masked_cross_entropy(logits: Tensor, targets: np.ndarray, mask: np.ndarray):
    """Summed cross entropy over positions where ``mask`` is true.

    ``logits`` is (..., V), ``targets``/``mask`` match the leading axes.
    Returns (loss, dlogits).
    """
    V = logits.shape[-1]
    t = np.where(mask, targets, 0)
    if np.any((t < 0) | (t >= V)):
        raise IndexError(f"cross_entropy: targets out of range for {V} classes")
    logp = log_softmax(logits)
    picked = np.take_along_axis(logp, t[..., None], axis=-1)[..., 0]
    m = mask.astype(np.float64)
    loss = float(-(picked * m).sum())
    g = np.exp(logp)
    np.put_along_axis(g, t[..., None], np.take_along_axis(g, t[..., None], -1) - 1.0, axis=-1)
    return loss, g * m[..., None]


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    m: Tensor
    v: Tensor
    step: int = 0

    @classmethod
    def zeros_like(cls, param: Tensor) -> "AdamState":
        return cls(np.zeros_like(param), np.zeros_like(param), 0)


def adam_step(
    param: Tensor,
    grad: Tensor,
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """Bias-corrected Adam update, in place on ``param`` and ``state``."""
    if param.shape != grad.shape or state.m.shape != param.shape:
        raise ShapeError(
            f"adam: param {param.shape}, grad {grad.shape}, moments {state.m.shape} disagree"
        )
    state.step += 1
    state.m *= beta1
    state.m += (1.0 - beta1) * grad
    state.v *= beta2
    state.v += (1.0 - beta2) * grad * grad
    m_hat = state.m / (1.0 - beta1**state.step)
    v_hat = state.v / (1.0 - beta2**state.step)
    param -= lr * m_hat / (np.sqrt(v_hat) + eps)


@dataclass
class Adam:
    """Adam over a dict of named parameters."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    states: dict[str, AdamState] = field(default_factory=dict)

    def step(self, params: dict[str, Tensor], grads: dict[str, Tensor]) -> None:
        for name, p in params.items():
            st = self.states.get(name)
            if st is None:
                st = self.states[name] = AdamState.zeros_like(p)
            adam_step(p, grads[name], st, self.lr, self.beta1, self.beta2, self.eps)


# ---------------------------------------------------------------------------
# gradient oracle
# ---------------------------------------------------------------------------


def finite_diff_grad(f: Callable[[Tensor], float], x: Tensor, eps: float = 1e-5) -> Tensor:
    """Central-difference gradient of scalar ``f`` at ``x``; ``x`` is restored afterwards."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        orig = x[idx]
        x[idx] = orig + eps
        fp = f(x)
        x[idx] = orig - eps
        fm = f(x)
        x[idx] = orig
        g[idx] = (fp - fm) / (2.0 * eps)
    return g


def max_relative_error(analytic: Tensor, numeric: Tensor, floor: float = 1e-6) -> float:
    """max_i |a_i - n_i| / max(|a_i|, |n_i|, floor)."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    if a.size == 0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom))
