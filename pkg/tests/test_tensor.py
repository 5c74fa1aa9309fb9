"""Tensor-core op contracts: oracles, shape errors, backward rules."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spinseg import tensor as T
from spinseg.tensor import Tensor


def naive_matmul(a, b):
    m, k = a.shape
    k2, n = b.shape
    out = np.zeros((m, n), dtype=a.dtype)
    for i in range(m):
        for j in range(n):
            for p in range(k):
                out[i, j] += a[i, p] * b[p, j]
    return out


class TestMatmul:
    def test_identity(self):
        a = np.array([[3.0, 4.0], [5.0, 6.0]])
        out = T.matmul(Tensor(np.eye(2)), Tensor(a))
        np.testing.assert_array_equal(out.data, a.astype(np.float32))

    def test_against_naive_oracle(self):
        a = np.array([[1.0, 2.0]])
        b = np.array([[3.0], [4.0]])
        out = T.matmul(Tensor(a), Tensor(b))
        np.testing.assert_allclose(out.data, [[11.0]])
        rng = np.random.default_rng(0)
        for _ in range(5):
            x = rng.standard_normal((3, 4)).astype(np.float64)
            y = rng.standard_normal((4, 5)).astype(np.float64)
            got = T.matmul(Tensor(x), Tensor(y)).data
            np.testing.assert_allclose(got, naive_matmul(x, y), rtol=1e-12)

    def test_shape_mismatch_names_both_shapes(self):
        with pytest.raises(ValueError, match=r"\(2, 3\).*\(2, 3\)"):
            T.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))

    def test_backward_rules(self):
        a = Tensor(np.random.default_rng(1).standard_normal((3, 4)), requires_grad=True, dtype=np.float64)
        b = Tensor(np.random.default_rng(2).standard_normal((4, 2)), requires_grad=True, dtype=np.float64)
        out = T.matmul(a, b)
        g = np.random.default_rng(3).standard_normal(out.shape)
        (out * Tensor(g)).sum().backward()
        np.testing.assert_allclose(a.grad, g @ b.data.T, rtol=1e-12)
        np.testing.assert_allclose(b.grad, a.data.T @ g, rtol=1e-12)


class TestConv2d:
    def test_1x1_identity_kernel(self):
        x = Tensor(np.random.default_rng(0).random((3, 5, 5)))
        w = Tensor(np.eye(3).reshape(3, 3, 1, 1))
        out = T.conv2d(x, w)
        np.testing.assert_allclose(out.data, x.data, rtol=1e-6)

    def test_all_ones_3x3(self):
        x = Tensor(np.ones((1, 3, 3)))
        w = Tensor(np.ones((1, 1, 3, 3)))
        out = T.conv2d(x, w)
        np.testing.assert_allclose(out.data, [[[9.0]]])

    def test_1x1_equals_matmul_bit_identical_64bit(self):
        rng = np.random.default_rng(4)
        x = Tensor(rng.standard_normal((6, 8, 8)), dtype=np.float64)
        w = Tensor(rng.standard_normal((4, 6, 1, 1)), dtype=np.float64)
        conv = T.conv2d(x, w).data.reshape(4, 64)
        mm = (w.data.reshape(4, 6) @ x.data.reshape(6, 64))
        assert np.array_equal(conv, mm)

    def test_invalid_kernel(self):
        with pytest.raises(ValueError, match="kernel"):
            T.conv2d(Tensor(np.zeros((1, 4, 4))), Tensor(np.zeros((1, 1, 5, 5))))

    def test_channel_mismatch(self):
        with pytest.raises(ValueError, match="channel"):
            T.conv2d(Tensor(np.zeros((2, 4, 4))), Tensor(np.zeros((1, 3, 3, 3))))


class TestConvTranspose2d:
    def test_k2_ones_doubles(self):
        x = Tensor(np.array([[[5.0]]]))
        w = Tensor(np.ones((1, 1, 2, 2)))
        out = T.conv_transpose2d(x, w)
        np.testing.assert_allclose(out.data, np.full((1, 2, 2), 5.0))

    def test_output_shape_contract(self):
        x = Tensor(np.zeros((64, 16, 16)))
        w = Tensor(np.zeros((64, 32, 4, 4)))
        assert T.conv_transpose2d(x, w).shape == (32, 32, 32)

    def test_unsupported_stride(self):
        with pytest.raises(ValueError, match="stride"):
            T.conv_transpose2d(Tensor(np.zeros((1, 2, 2))), Tensor(np.zeros((1, 1, 2, 2))), stride=3)


class TestPooling:
    def test_maxpool_example(self):
        out = T.maxpool2d(Tensor(np.array([[[1.0, 2.0], [3.0, 4.0]]])))
        np.testing.assert_allclose(out.data, [[[4.0]]])

    def test_maxpool_indivisible(self):
        with pytest.raises(ValueError, match="divisible"):
            T.maxpool2d(Tensor(np.zeros((1, 3, 4))))

    def test_global_avg_pool_constant(self):
        x = Tensor(np.full((3, 4, 4), 2.5))
        np.testing.assert_allclose(T.global_avg_pool(x).data, [2.5, 2.5, 2.5])

    def test_maxpool_backward_routes_to_argmax(self):
        x = Tensor(np.array([[[1.0, 2.0], [3.0, 4.0]]]), requires_grad=True, dtype=np.float64)
        T.maxpool2d(x).sum().backward()
        np.testing.assert_array_equal(x.grad, [[[0.0, 0.0], [0.0, 1.0]]])


class TestActivations:
    def test_relu(self):
        out = T.relu(Tensor(np.array([-1.0, 0.0, 2.0])))
        np.testing.assert_array_equal(out.data, [0.0, 0.0, 2.0])

    def test_softmax_symmetry(self):
        np.testing.assert_allclose(T.softmax_rows(Tensor(np.array([[0.0, 0.0]]))).data, [[0.5, 0.5]])

    def test_softmax_no_overflow(self):
        out = T.softmax_rows(Tensor(np.array([[1000.0, 1000.0]])))
        np.testing.assert_allclose(out.data, [[0.5, 0.5]])
        assert np.all(np.isfinite(out.data))

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.lists(st.floats(min_value=-1e3, max_value=1e3), min_size=2, max_size=6),
                    min_size=1, max_size=5).filter(lambda rows: len({len(r) for r in rows}) == 1))
    def test_softmax_rows_sum_to_one(self, rows):
        out = T.softmax_rows(Tensor(np.array(rows, dtype=np.float32)))
        np.testing.assert_allclose(out.data.sum(axis=-1), 1.0, atol=1e-6)
        assert np.all(out.data >= 0)


class TestBilinearResize:
    def test_constant_preserved(self):
        x = Tensor(np.full((2, 8, 8), 3.25))
        for scale in (0.25, 0.5, 2.0, 4.0):
            out = T.bilinear_resize(x, scale)
            np.testing.assert_allclose(out.data, 3.25, rtol=1e-6)

    def test_upscale_1x1(self):
        out = T.bilinear_resize(Tensor(np.array([[[7.0]]])), 2.0)
        np.testing.assert_allclose(out.data, np.full((1, 2, 2), 7.0))

    def test_zero_target_extent(self):
        with pytest.raises(ValueError, match="extent"):
            T.bilinear_resize(Tensor(np.zeros((1, 2, 2))), 0.25)


class TestBatchNorm:
    def test_eval_identity(self):
        x = Tensor(np.random.default_rng(0).standard_normal((2, 3, 4, 4)))
        gamma = Tensor(np.ones(3))
        beta = Tensor(np.zeros(3))
        out = T.batchnorm2d(x, gamma, beta, np.zeros(3), np.ones(3), training=False, eps=0.0)
        np.testing.assert_allclose(out.data, x.data, rtol=1e-5)

    def test_train_normalizes(self):
        x = Tensor(np.random.default_rng(1).standard_normal((4, 3, 8, 8)) * 3 + 2, dtype=np.float64)
        gamma = Tensor(np.full(3, 1.5), dtype=np.float64)
        beta = Tensor(np.full(3, 0.25), dtype=np.float64)
        out = T.batchnorm2d(x, gamma, beta, np.zeros(3), np.ones(3), training=True, eps=1e-12)
        np.testing.assert_allclose(out.data.mean(axis=(0, 2, 3)), 0.25, atol=1e-4)
        np.testing.assert_allclose(out.data.std(axis=(0, 2, 3)), 1.5, atol=1e-4)

    def test_running_stats_update(self):
        rm, rv = np.zeros(2), np.ones(2)
        x = Tensor(np.random.default_rng(2).standard_normal((4, 2, 4, 4)) + 5.0)
        T.batchnorm2d(x, Tensor(np.ones(2)), Tensor(np.zeros(2)), rm, rv, training=True)
        assert np.all(rm > 0.3)  # moved toward the batch mean of ~5

    def test_stats_shape_mismatch(self):
        with pytest.raises(ValueError, match="shape"):
            T.batchnorm2d(Tensor(np.zeros((1, 3, 2, 2))), Tensor(np.ones(2)), Tensor(np.zeros(2)),
                          np.zeros(3), np.ones(3), training=False)


class TestBackward:
    def test_sum_grad_is_ones(self):
        x = Tensor(np.random.default_rng(0).random((3, 4)), requires_grad=True)
        x.sum().backward()
        np.testing.assert_array_equal(x.grad, np.ones((3, 4), dtype=np.float32))

    def test_half_square_grad_is_x(self):
        x = Tensor(np.random.default_rng(1).standard_normal((5,)), requires_grad=True, dtype=np.float64)
        ((x * x).sum() / 2.0).backward()
        np.testing.assert_allclose(x.grad, x.data, rtol=1e-12)

    def test_non_scalar_loss_rejected(self):
        x = Tensor(np.zeros((2, 2)), requires_grad=True)
        with pytest.raises(ValueError, match="scalar"):
            x.backward()

    def test_accumulation_across_backwards(self):
        x = Tensor(np.ones(3), requires_grad=True, dtype=np.float64)
        x.sum().backward()
        x.sum().backward()
        np.testing.assert_array_equal(x.grad, np.full(3, 2.0))

    def test_backward_linearity(self):
        rng = np.random.default_rng(3)
        xv = rng.standard_normal((4, 4))

        def grad_of(a, b):
            x = Tensor(xv, requires_grad=True, dtype=np.float64)
            l1 = (x * x).sum()
            l2 = T.relu(x).sum()
            (a * l1 + b * l2).backward()
            return x.grad

        g1 = grad_of(1.0, 0.0)
        g2 = grad_of(0.0, 1.0)
        g = grad_of(0.7, -1.3)
        np.testing.assert_allclose(g, 0.7 * g1 - 1.3 * g2, atol=1e-10)

    def test_no_grad_blocks_tape(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with T.no_grad():
            y = (x * 2.0).sum()
        assert y._backward_fn is None and not y.requires_grad

    def test_finite_checks_flag(self):
        x = Tensor(np.array([1.0, 2.0]))
        with T.finite_checks():
            with pytest.raises(FloatingPointError):
                T.div(x, Tensor(np.array([0.0, 1.0])))


class TestSGD:
    def test_plain_step(self):
        from spinseg.optim import SGD

        p = Tensor(np.array([1.0, 2.0]), requires_grad=True, dtype=np.float64)
        p.grad = np.array([0.5, -0.5])
        opt = SGD([("p", p)], lr=1.0, momentum=0.0, weight_decay=0.0)
        opt.step()
        np.testing.assert_allclose(p.data, [0.5, 2.5])

    def test_defaults_match_recipe(self):
        from spinseg.optim import SGD

        opt = SGD([], lr=0.01)
        assert opt.momentum == 0.9 and opt.weight_decay == 0.0005

    def test_two_momentum_steps_closed_form(self):
        from spinseg.optim import SGD

        p = Tensor(np.array([0.0]), requires_grad=True, dtype=np.float64)
        g = 0.3
        opt = SGD([("p", p)], lr=1.0, momentum=0.9, weight_decay=0.0)
        for _ in range(2):
            p.grad = np.array([g])
            opt.step()
        # v1 = g, v2 = 0.9 g + g = 1.9 g; total displacement -(g + 1.9 g)
        np.testing.assert_allclose(p.data, [-(g + 1.9 * g)], rtol=1e-12)

    def test_missing_grad_raises(self):
        from spinseg.optim import SGD

        p = Tensor(np.array([0.0]), requires_grad=True)
        opt = SGD([("p", p)])
        with pytest.raises(ValueError, match="no gradient"):
            opt.step()
