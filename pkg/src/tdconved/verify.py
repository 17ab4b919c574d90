"""Finite-difference gradient check and parallel-vs-incremental benchmark."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import numcore as nc
from .config import Config
from .decoder import IncrementalState
from .model import TDConvED, decoder_view, init_params
from .vocab import BOS, PAD

TINY = dict(d_v=4, d_r=4, d_f=4, d_a=4, d_w=4, k=3, num_enc_blocks=2, num_dec_blocks=2,
            t_max=8, max_len=4, n_v=3, variant="full")
KINK_MARGIN = 0.05
GRAD_TOL = 1e-4


def tiny_config(**kw) -> Config:
    return Config(**{**TINY, **kw})


def _min_kink_distance(model: TDConvED, features: np.ndarray) -> float:
    from .encoder import encode_forward
    from .model import encoder_view

    _, cache = encode_forward(features, encoder_view(model.params))
    dists = [np.abs(c["pos"] - np.round(c["pos"])).min() for c in cache["blocks"]]
    return float(min(dists)) if dists else 1.0


def random_instance(cfg: Config, vocab_size: int, rng: nc.Rng, batch: int = 2, steps: int = 4,
                    margin: float = KINK_MARGIN, max_tries: int = 200):
    """A model with every parameter randomised plus a batch, with all deformable
    sampling positions at least ``margin`` away from an integer."""
    params = init_params(cfg, vocab_size, rng)
    for name, p in params.items():
        p[...] = rng.uniform(-0.5, 0.5, p.shape)
        if name.endswith(".W_f"):
            p *= 0.2
    model = TDConvED(cfg, vocab_size, params)
    features = rng.normal((batch, cfg.n_v, cfg.d_v))
    token_in = rng.integers(4, vocab_size, (batch, steps)) if vocab_size > 4 else np.full((batch, steps), 3)
    token_in[:, 0] = BOS
    token_out = rng.integers(2, vocab_size, (batch, steps))
    token_out[-1, -1] = PAD  # exercise masking
    b_f_names = [n for n in params if n.endswith(".b_f")]
    for _ in range(max_tries):
        if _min_kink_distance(model, features) >= margin:
            break
        for n in b_f_names:
            params[n][...] = rng.uniform(-0.9, 0.9, params[n].shape)
    else:
        raise RuntimeError("could not place sampling positions away from interpolation kinks")
    return model, features, token_in, token_out


@dataclass
class GradRow:
    name: str
    size: int
    max_rel_err: float

    @property
    def passed(self) -> bool:
        return self.max_rel_err < GRAD_TOL


def gradcheck(cfg: Config | None = None, vocab_size: int = 5, seed: int = 0, steps: int = 4,
              corrupt: str | None = None, eps: float = 1e-5) -> list[GradRow]:
    """Analytic vs central-difference gradients of the summed loss, one row per parameter.

    ``corrupt`` names a parameter whose analytic gradient is deliberately
    scaled (negative control).
    """
    cfg = cfg or tiny_config()
    model, features, token_in, token_out = random_instance(cfg, vocab_size, nc.Rng(seed), steps=steps)
    _, _, grads = model.loss_and_grads(features, token_in, token_out)
    if corrupt is not None:
        grads[corrupt] = grads[corrupt] * 1.5 + 1e-3
    rows = []
    for name, p in model.params.items():
        num = nc.finite_diff_grad(lambda _: model.total_loss(features, token_in, token_out), p, eps)
        rows.append(GradRow(name, p.size, nc.max_relative_error(grads[name], num)))
    return rows


def format_gradcheck(rows: list[GradRow]) -> str:
    lines = [f"{'parameter':<24} {'size':>6} {'max_rel_err':>12}  status"]
    for r in rows:
        lines.append(f"{r.name:<24} {r.size:>6} {r.max_rel_err:>12.3e}  {'PASS' if r.passed else 'FAIL'}")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# benchmark
# ---------------------------------------------------------------------------


def incremental_logits(model: TDConvED, features: np.ndarray, token_in: np.ndarray) -> np.ndarray:
    """Logits for teacher-forced inputs computed one step at a time."""
    z, z_mean = model.encode(features)
    state = IncrementalState.initial(decoder_view(model.params), (features.shape[0],))
    rows = []
    for t in range(token_in.shape[1]):
        logits, _, state = model.step_logits(token_in[:, t], t, z, z_mean, state)
        rows.append(logits)
    return np.stack(rows, axis=1)


@dataclass
class BenchReport:
    steps: int
    parallel_s: float
    sequential_s: float
    max_abs_diff: float

    @property
    def ratio(self) -> float:
        return self.sequential_s / self.parallel_s

    def lines(self) -> list[str]:
        return [
            f"steps={self.steps}",
            f"max_abs_logit_diff={self.max_abs_diff:.3e}",
            f"# time parallel_s={self.parallel_s:.6f}",
            f"# time sequential_s={self.sequential_s:.6f}",
            f"# time ratio={self.ratio:.3f}",
        ]


def bench(cfg: Config, vocab_size: int = 20, steps: int = 25, batch: int = 8, repeats: int = 5,
          seed: int = 0) -> BenchReport:
    """Median wall-clock of the one-pass teacher-forced forward vs ``steps`` incremental steps.

    Both paths include encoding. Their logits are compared before timing.
    """
    rng = nc.Rng(seed)
    model = TDConvED(cfg, vocab_size, init_params(cfg, vocab_size, rng))
    features = rng.normal((batch, cfg.n_v, cfg.d_v))
    token_in = rng.integers(4, vocab_size, (batch, steps))
    token_in[:, 0] = BOS
    par = model.forward_train(features, token_in)[0]
    seq = incremental_logits(model, features, token_in)
    diff = float(np.max(np.abs(par - seq)))
    if diff > 1e-9:
        raise AssertionError(f"parallel and incremental logits disagree by {diff:.3e}")

    def timed(fn):
        ts = []
        for _ in range(repeats):
            t0 = time.perf_counter()
            fn()
            ts.append(time.perf_counter() - t0)
        return float(np.median(ts))

    tp = timed(lambda: model.forward_train(features, token_in))
    ts = timed(lambda: incremental_logits(model, features, token_in))
    return BenchReport(steps, tp, ts, diff)
