"""Graph-reasoning block: similarity invariants, dense oracles for each
projection step, identity-at-init, permutation equivariance, and the
parameter-count closed form."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spinseg import tensor as T
from spinseg.nn import Linear
from spinseg.spin import (
    SpinBlock,
    SpinPyramid,
    _as_matrix,
    interaction_reason,
    project_interaction,
    reverse_project,
    spatial_reason,
    spatial_similarity,
    spin_param_count,
)
from spinseg.tensor import Tensor


def _f64_block(channels=4, m=2, n=2, s=2, seed=0, variant="full"):
    with T.default_dtype(np.float64):
        return SpinBlock(channels, m=m, n=n, s=s, variant=variant, rng=np.random.default_rng(seed))


def _linear_oracle(layer: Linear, x: np.ndarray) -> np.ndarray:
    return x @ layer.weight.data.T + layer.bias.data


class TestSpatialSimilarity:
    def test_single_pixel(self):
        block = _f64_block()
        xm = Tensor(np.random.default_rng(0).standard_normal((1, 1, 4)))
        a = spatial_similarity(xm, block.phi_s, block.lam)
        np.testing.assert_allclose(a.data, [[[1.0]]])

    def test_two_identical_pixels(self):
        block = _f64_block()
        row = np.random.default_rng(1).standard_normal(4)
        xm = Tensor(np.stack([row, row])[None])
        a = spatial_similarity(xm, block.phi_s, block.lam)
        np.testing.assert_allclose(a.data, np.full((1, 2, 2), 0.5), atol=1e-12)

    def test_matches_dense_oracle(self):
        with T.default_dtype(np.float64):
            block = SpinBlock(4, m=2, n=2, s=2, rng=np.random.default_rng(2))
        x = np.random.default_rng(3).standard_normal((9, 4))
        a = spatial_similarity(Tensor(x[None]), block.phi_s, block.lam).data[0]
        # independent dense evaluation of the three-matrix product
        p = np.maximum(_linear_oracle(block.phi_s, x), 0.0)
        lam = _linear_oracle(block.lam, x.mean(axis=0))
        scores = p @ np.diag(lam) @ p.T
        e = np.exp(scores - scores.max(axis=1, keepdims=True))
        expected = e / e.sum(axis=1, keepdims=True)
        np.testing.assert_allclose(a, expected, atol=1e-10)
        np.testing.assert_allclose(a.sum(axis=1), 1.0, atol=1e-6)

    @settings(max_examples=25, deadline=None)
    @given(seed=st.integers(0, 10_000), l=st.integers(1, 12), c=st.integers(1, 6))
    def test_row_stochastic_property(self, seed, l, c):
        rng = np.random.default_rng(seed)
        with T.default_dtype(np.float64):
            block = SpinBlock(c, m=max(1, c // 2), n=1, s=1, rng=rng)
        x = Tensor(rng.standard_normal((1, l, c)) * rng.uniform(0.1, 100))
        a = spatial_similarity(x, block.phi_s, block.lam).data
        assert np.all(a >= 0)
        np.testing.assert_allclose(a.sum(axis=-1), 1.0, atol=1e-6)


class TestSpatialReason:
    def test_identity_similarity(self):
        with T.default_dtype(np.float64):
            w = Linear(4, 4, rng=np.random.default_rng(0))
        w.weight.data = np.eye(4)
        w.bias.data = np.zeros(4)
        x = np.random.default_rng(1).standard_normal((1, 6, 4))
        out = spatial_reason(Tensor(x), Tensor(np.eye(6)[None]), w)
        np.testing.assert_allclose(out.data, np.maximum(x, 0.0), atol=1e-12)

    def test_zero_weights(self):
        with T.default_dtype(np.float64):
            w = Linear(4, 4, zero_init=True)
        x = Tensor(np.random.default_rng(2).standard_normal((1, 6, 4)))
        out = spatial_reason(x, Tensor(np.eye(6)[None]), w)
        np.testing.assert_array_equal(out.data, np.zeros((1, 6, 4)))

    def test_uniform_similarity_gives_mean_feature(self):
        with T.default_dtype(np.float64):
            w = Linear(4, 4, rng=np.random.default_rng(3))
        x = np.random.default_rng(4).standard_normal((1, 5, 4))
        a = Tensor(np.full((1, 5, 5), 1.0 / 5))
        out = spatial_reason(Tensor(x), a, w).data[0]
        expected_row = np.maximum(_linear_oracle(w, x[0].mean(axis=0)), 0.0)
        np.testing.assert_allclose(out, np.tile(expected_row, (5, 1)), atol=1e-10)


class TestInteractionSpace:
    def test_zero_theta(self):
        block = _f64_block()
        block.theta.weight.data = np.zeros_like(block.theta.weight.data)
        block.theta.bias.data = np.zeros_like(block.theta.bias.data)
        x = Tensor(np.random.default_rng(0).standard_normal((1, 6, 4)))
        v, _ = project_interaction(x, block.theta, block.phi_i)
        np.testing.assert_array_equal(v.data, np.zeros((1, 2, 2)))

    def test_single_position_outer_product(self):
        block = _f64_block()
        x = np.random.default_rng(1).standard_normal((1, 1, 4))
        v, th = project_interaction(Tensor(x), block.theta, block.phi_i)
        expected = np.outer(_linear_oracle(block.theta, x[0, 0]), _linear_oracle(block.phi_i, x[0, 0]))
        np.testing.assert_allclose(v.data[0], expected, atol=1e-12)

    def test_projection_matches_dense_oracle(self):
        with T.default_dtype(np.float64):
            block = SpinBlock(5, m=2, n=3, s=4, rng=np.random.default_rng(2))
        x = np.random.default_rng(3).standard_normal((6, 5))
        v, _ = project_interaction(Tensor(x[None]), block.theta, block.phi_i)
        th = _linear_oracle(block.theta, x)
        ph = _linear_oracle(block.phi_i, x)
        np.testing.assert_allclose(v.data[0], th.T @ ph / 6.0, atol=1e-12)

    def test_reason_pure_skip(self):
        with T.default_dtype(np.float64):
            w = Linear(2, 2, rng=np.random.default_rng(0))
        w.weight.data = np.eye(2)
        w.bias.data = np.zeros(2)
        v = Tensor(np.random.default_rng(4).standard_normal((1, 3, 2)))
        out = interaction_reason(v, Tensor(np.zeros((3, 3))), w)
        np.testing.assert_allclose(out.data, v.data, atol=1e-12)

    def test_reason_identity_adjacency_cancels(self):
        with T.default_dtype(np.float64):
            w = Linear(2, 2, rng=np.random.default_rng(1))
        w.bias.data = np.zeros(2)
        v = Tensor(np.random.default_rng(5).standard_normal((1, 3, 2)))
        out = interaction_reason(v, Tensor(np.eye(3)), w)
        np.testing.assert_allclose(out.data, np.zeros((1, 3, 2)), atol=1e-12)

    def test_reason_matches_dense_oracle(self):
        rng = np.random.default_rng(6)
        with T.default_dtype(np.float64):
            w = Linear(2, 2, rng=rng)
        v = rng.standard_normal((1, 3, 2))
        a = rng.standard_normal((3, 3))
        out = interaction_reason(Tensor(v), Tensor(a), w)
        expected = _linear_oracle(w, (np.eye(3) - a) @ v[0])
        np.testing.assert_allclose(out.data[0], expected, atol=1e-12)

    def test_reverse_project_zero(self):
        block = _f64_block()
        th = Tensor(np.random.default_rng(7).standard_normal((1, 6, 2)))
        out = reverse_project(Tensor(np.zeros((1, 2, 2))), th, block.phi_out)
        np.testing.assert_array_equal(out.data, np.zeros((1, 6, 4)))

    def test_reverse_project_broadcast_single_node(self):
        with T.default_dtype(np.float64):
            block = SpinBlock(4, m=2, n=1, s=2, rng=np.random.default_rng(8))
        block.phi_out.weight.data = np.random.default_rng(9).standard_normal((4, 2))
        z = np.random.default_rng(10).standard_normal((1, 1, 2))
        th = Tensor(np.ones((1, 6, 1)))
        out = reverse_project(Tensor(z), th, block.phi_out).data[0]
        assert np.allclose(out, out[0])  # every position identical

    def test_reverse_project_matches_dense_oracle(self):
        rng = np.random.default_rng(11)
        with T.default_dtype(np.float64):
            block = SpinBlock(5, m=2, n=3, s=4, rng=rng)
        block.phi_out.weight.data = rng.standard_normal((5, 4))
        block.phi_out.bias.data = rng.standard_normal(5)
        z = rng.standard_normal((1, 3, 4))
        th = rng.standard_normal((1, 7, 3))
        out = reverse_project(Tensor(z), Tensor(th), block.phi_out)
        np.testing.assert_allclose(out.data[0], _linear_oracle(block.phi_out, th[0] @ z[0]), atol=1e-12)


class TestSpinForward:
    def test_identity_at_zero_init_bitwise(self):
        with T.default_dtype(np.float64):
            block = SpinBlock(4, m=2, n=2, s=2, rng=np.random.default_rng(0))
            x = Tensor(np.abs(np.random.default_rng(1).standard_normal((1, 4, 4, 4))))
            out = block(x)
        assert np.array_equal(out.data, x.data)

    def test_shape_contract(self):
        block = SpinBlock(64, rng=np.random.default_rng(0))
        x = Tensor(np.random.default_rng(1).random((64, 16, 16)).astype(np.float32))
        assert block(x).shape == (64, 16, 16)

    def test_permutation_equivariance(self):
        rng = np.random.default_rng(2)
        with T.default_dtype(np.float64):
            block = SpinBlock(4, m=2, n=2, s=2, rng=rng)
            block.w_s.weight.data = rng.standard_normal((4, 4)) * 0.3
            block.phi_out.weight.data = rng.standard_normal((4, 2)) * 0.3
        l, c = 16, 4
        x = rng.standard_normal((1, l, c))
        base_a = spatial_similarity(Tensor(x), block.phi_s, block.lam).data[0]
        base_out = block.correction(Tensor(x)).data[0] + x[0]
        for _ in range(20):
            perm = rng.permutation(l)
            px = x[:, perm, :]
            pa = spatial_similarity(Tensor(px), block.phi_s, block.lam).data[0]
            np.testing.assert_allclose(pa, base_a[np.ix_(perm, perm)], atol=1e-10)
            pout = block.correction(Tensor(px)).data[0] + px[0]
            np.testing.assert_allclose(pout, base_out[perm], atol=1e-10)


class TestSpinPyramid:
    def test_identity_at_zero_init_bitwise(self):
        with T.default_dtype(np.float64):
            pyr = SpinPyramid(4, m=2, n=2, s=2, rng=np.random.default_rng(0))
            x = Tensor(np.abs(np.random.default_rng(1).standard_normal((1, 4, 8, 8))))
            out = pyr(x)
        assert np.array_equal(out.data, x.data)

    def test_sum_variant_also_identity_at_init(self):
        with T.default_dtype(np.float64):
            pyr = SpinPyramid(4, m=2, n=2, s=2, aggregate="sum", rng=np.random.default_rng(0))
            x = Tensor(np.abs(np.random.default_rng(1).standard_normal((1, 4, 8, 8))))
            out = pyr(x)
        assert np.array_equal(out.data, x.data)

    def test_shape_contract(self):
        pyr = SpinPyramid(64, rng=np.random.default_rng(0))
        x = Tensor(np.random.default_rng(1).random((64, 64, 64)).astype(np.float32))
        assert pyr(x).shape == (64, 64, 64)

    def test_indivisible_extents(self):
        pyr = SpinPyramid(4, m=2, n=2, s=2, rng=np.random.default_rng(0))
        with pytest.raises(ValueError, match="divisible by 4"):
            pyr(Tensor(np.zeros((4, 6, 6), dtype=np.float32)))


class TestParamCount:
    def test_closed_form_matches_counted(self):
        for c, m, n, s in ((128, 64, 32, 64), (64, 32, 16, 32), (8, 4, 2, 4)):
            block = SpinBlock(c, m=m, n=n, s=s, rng=np.random.default_rng(0))
            assert block.count_parameters() == spin_param_count(c, m, n, s)
        for variant in ("spatial", "interaction"):
            block = SpinBlock(16, m=8, n=4, s=8, variant=variant, rng=np.random.default_rng(0))
            assert block.count_parameters() == spin_param_count(16, 8, 4, 8, variant=variant)

    def test_reference_dims_value(self):
        # C=128, M=64, N=32, S=64 with biases, all transforms included
        expected = (128 * 64 + 64) * 2 + (128 * 128 + 128) + (128 * 32 + 32) \
            + (128 * 64 + 64) + 32 * 32 + (64 * 64 + 64) + (64 * 128 + 128)
        assert spin_param_count(128, 64, 32, 64) == expected
