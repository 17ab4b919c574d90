import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tdconved import numcore as nc
from tdconved.encoder import EncoderParams, encode, encode_backward, encode_forward, mean_pool, mean_pool_backward
from tdconved.errors import ContractError, ShapeError
from tdconved.tdconv import DeformConvParams

import oracles


def random_encoder(rng, d_v, d_r, k=3, n_blocks=2, zero_offsets=False):
    blocks = []
    for _ in range(n_blocks):
        W_f = np.zeros((k, k * d_r)) if zero_offsets else rng.uniform(-0.3, 0.3, (k, k * d_r))
        b_f = np.zeros(k) if zero_offsets else rng.uniform(-0.9, 0.9, k)
        blocks.append(DeformConvParams(W_f, b_f, rng.uniform(-0.5, 0.5, (2 * d_r, k * d_r)),
                                       rng.uniform(-0.5, 0.5, 2 * d_r)))
    return EncoderParams(rng.uniform(-0.5, 0.5, (d_r, d_v)), rng.uniform(-0.5, 0.5, d_r), tuple(blocks))


class TestEncode:
    def test_zero_fixed_point(self):
        p = EncoderParams(np.zeros((2, 3)), np.zeros(2), (DeformConvParams.zeros(2, 3),) * 2)
        assert not encode(np.zeros((4, 3)), p).any()

    def test_zero_offsets_equals_plain_stack(self, rng):
        p = random_encoder(rng, 3, 4, zero_offsets=True)
        f = rng.normal((5, 3))
        expected = oracles.encoder(f, p.W_in, p.b_in, p.blocks, deform=False)
        np.testing.assert_allclose(encode(f, p), expected, rtol=0, atol=1e-12)

    def test_end_to_end_oracle(self, rng):
        p = random_encoder(rng, 2, 2)
        f = rng.normal((3, 2))
        np.testing.assert_allclose(encode(f, p), oracles.encoder(f, p.W_in, p.b_in, p.blocks), rtol=0, atol=1e-12)

    def test_no_blocks_is_projection(self, rng):
        p = random_encoder(rng, 3, 4, n_blocks=0)
        f = rng.normal((5, 3))
        np.testing.assert_array_equal(encode(f, p), nc.linear_forward(f, p.W_in, p.b_in))

    @pytest.mark.parametrize("n", [1, 2, 5, 25])
    def test_length_preserved(self, rng, n):
        assert encode(rng.normal((n, 3)), random_encoder(rng, 3, 4)).shape == (n, 4)

    def test_feature_dim_mismatch(self, rng):
        with pytest.raises(ShapeError):
            encode(rng.normal((4, 5)), random_encoder(rng, 3, 4))

    def test_gradients_through_mean_pool(self, rng):
        p = random_encoder(rng, 3, 3)
        f = rng.normal((2, 4, 3))
        w = rng.normal((2, 3))
        z, cache = encode_forward(f, p)
        gf, grads = encode_backward(mean_pool_backward(w, 4), cache, p)
        loss = lambda _: float((mean_pool(encode(f, p)) * w).sum())
        assert nc.max_relative_error(gf, nc.finite_diff_grad(loss, f)) < 1e-4
        assert nc.max_relative_error(grads.W_in, nc.finite_diff_grad(loss, p.W_in)) < 1e-4
        for blk, gblk in zip(p.blocks, grads.blocks):
            for name in DeformConvParams._fields:
                assert nc.max_relative_error(getattr(gblk, name), nc.finite_diff_grad(loss, getattr(blk, name))) < 1e-4


class TestMeanPool:
    def test_identical(self, rng):
        v = rng.normal(4)
        np.testing.assert_allclose(mean_pool(np.tile(v, (6, 1))), v, atol=1e-15)

    def test_arithmetic(self):
        assert mean_pool(np.array([[1.0, 2.0], [3.0, 4.0]])).tolist() == [2.0, 3.0]

    def test_vs_scalar_mean(self, rng):
        z = rng.normal((25, 7))
        np.testing.assert_allclose(mean_pool(z), oracles.mean(z), rtol=0, atol=1e-12)

    def test_empty(self):
        with pytest.raises(ContractError):
            mean_pool(np.zeros((0, 3)))

    @given(st.integers(0, 2**32))
    @settings(max_examples=30, deadline=None)
    def test_permutation_invariant(self, seed):
        r = nc.Rng(seed)
        z = r.normal((9, 4))
        np.testing.assert_allclose(mean_pool(z[r.permutation(9)]), mean_pool(z), atol=1e-14)
