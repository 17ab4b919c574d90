import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tdconved import numcore as nc
from tdconved.attention import AttentionParams, attend, attend_backward, attend_forward
from tdconved.errors import ShapeError

import oracles


def params(rng, d_r=3, d_f=4, d_a=5):
    return AttentionParams(rng.normal((1, d_a)), rng.normal((d_a, d_r)), rng.normal((d_a, d_f)), rng.normal(d_a))


class TestAttend:
    def test_single_source(self, rng):
        z = rng.normal((1, 3))
        lam, zhat = attend(z, rng.normal(4), params(rng))
        assert lam.tolist() == [1.0]
        np.testing.assert_allclose(zhat, z[0], atol=1e-15)

    def test_identical_sources(self, rng):
        z = np.tile(rng.normal(3), (4, 1))
        lam, zhat = attend(z, rng.normal(4), params(rng))
        np.testing.assert_allclose(lam, 0.25, atol=1e-15)
        np.testing.assert_allclose(zhat, z[0], atol=1e-14)

    def test_scalar_oracle(self, rng):
        p = params(rng)
        z, h = rng.normal((3, 3)), rng.normal(4)
        lam, zhat = attend(z, h, p)
        lam_o, zhat_o = oracles.attention(z, h, *p)
        np.testing.assert_allclose(lam, lam_o, rtol=0, atol=1e-12)
        np.testing.assert_allclose(zhat, zhat_o, rtol=0, atol=1e-12)

    def test_multi_step_matches_single(self, rng):
        p = params(rng)
        z, h = rng.normal((2, 5, 3)), rng.normal((2, 4, 4))
        lam, zhat = attend(z, h, p)
        for b in range(2):
            for t in range(4):
                l1, z1 = attend(z[b], h[b, t], p)
                np.testing.assert_allclose(lam[b, t], l1, atol=1e-14)
                np.testing.assert_allclose(zhat[b, t], z1, atol=1e-14)

    def test_shape_error(self, rng):
        with pytest.raises(ShapeError):
            attend(rng.normal((3, 2)), rng.normal(4), params(rng))

    @given(st.integers(0, 2**32), st.integers(1, 12))
    @settings(max_examples=50, deadline=None)
    def test_probability_hull_permutation(self, seed, n):
        r = nc.Rng(seed)
        p = params(r)
        z, h = r.normal((n, 3)), r.normal(4)
        lam, zhat = attend(z, h, p)
        assert np.all(lam >= 0) and abs(lam.sum() - 1) <= 1e-12
        assert np.all(zhat >= z.min(0) - 1e-12) and np.all(zhat <= z.max(0) + 1e-12)
        perm = r.permutation(n)
        lam_p, zhat_p = attend(z[perm], h, p)
        np.testing.assert_allclose(lam_p, lam[perm], atol=1e-12)
        np.testing.assert_allclose(zhat_p, zhat, atol=1e-12)

    def test_gradients(self, rng):
        p = params(rng)
        z, h = rng.normal((2, 3, 3)), rng.normal((2, 2, 4))
        gzhat, glam = rng.normal((2, 2, 3)), rng.normal((2, 2, 3))
        _, _, cache = attend_forward(z, h, p)
        gz, gh, gp = attend_backward(gzhat, cache, p, glam)

        def f(_):
            lam, zhat, _ = attend_forward(z, h, p)
            return float((zhat * gzhat).sum() + (lam * glam).sum())

        assert nc.max_relative_error(gz, nc.finite_diff_grad(f, z)) < 1e-4
        assert nc.max_relative_error(gh, nc.finite_diff_grad(f, h)) < 1e-4
        for name in AttentionParams._fields:
            assert nc.max_relative_error(getattr(gp, name), nc.finite_diff_grad(f, getattr(p, name))) < 1e-4
