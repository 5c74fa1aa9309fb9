"""Registered gradient checks over every differentiable op and the main
composites. Used by the `gradcheck` CLI verb and the acceptance suite.

All checks run in float64 with h=1e-3 central differences on 3 seeds;
primitive ops get full element coverage, composites a seeded subset.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from . import tensor as T
from .gradcheck import GradCheckResult, check_gradients, weighted_sum
from .losses import orientation_loss, seg_loss
from .model import NetworkConfig, RoadNet
from .nn import BatchNorm2d, Hourglass, ResidualBlock
from .spin import SpinBlock, SpinPyramid
from .tensor import Tensor

SEEDS = (0, 1, 2)
TOL_PRIMITIVE = 1e-4
TOL_COMPOSITE = 1e-3


def _randn(rng, *shape):
    return Tensor(rng.standard_normal(shape), requires_grad=True, dtype=np.float64)


def _positive(rng, *shape):
    # Values bounded away from relu kinks / pooling ties.
    return Tensor(rng.uniform(0.1, 1.0, size=shape), requires_grad=True, dtype=np.float64)


def _check_over_seeds(build: Callable[[np.random.Generator], tuple], max_samples=256) -> float:
    worst = 0.0
    for seed in SEEDS:
        rng = np.random.default_rng(seed)
        f, tensors = build(rng)
        worst = max(worst, check_gradients(f, tensors, max_samples=max_samples, seed=seed))
    return worst


def check_matmul() -> GradCheckResult:
    def build(rng):
        a = _randn(rng, 3, 4)
        b = _randn(rng, 4, 2)
        return (lambda: weighted_sum(T.matmul(a, b), np.random.default_rng(7))), [a, b]

    return GradCheckResult("matmul", _check_over_seeds(build), TOL_PRIMITIVE)


def check_conv2d() -> GradCheckResult:
    def build(rng):
        x = _randn(rng, 2, 5, 5)
        w = _randn(rng, 3, 2, 3, 3)
        b = _randn(rng, 3)
        return (lambda: weighted_sum(T.conv2d(x, w, b, stride=1, padding=1), np.random.default_rng(7))), [x, w, b]

    return GradCheckResult("conv2d", _check_over_seeds(build), TOL_PRIMITIVE)


def check_conv2d_stride2() -> GradCheckResult:
    def build(rng):
        x = _randn(rng, 2, 8, 8)
        w = _randn(rng, 3, 2, 7, 7)
        b = _randn(rng, 3)
        return (lambda: weighted_sum(T.conv2d(x, w, b, stride=2, padding=3), np.random.default_rng(7))), [x, w, b]

    return GradCheckResult("conv2d_k7s2", _check_over_seeds(build), TOL_PRIMITIVE)


def check_conv_transpose2d() -> GradCheckResult:
    def build(rng):
        x = _randn(rng, 2, 4, 4)
        w = _randn(rng, 2, 3, 4, 4)
        b = _randn(rng, 3)
        return (lambda: weighted_sum(T.conv_transpose2d(x, w, b), np.random.default_rng(7))), [x, w, b]

    return GradCheckResult("conv_transpose2d", _check_over_seeds(build), TOL_PRIMITIVE)


def check_maxpool() -> GradCheckResult:
    def build(rng):
        x = Tensor(rng.permutation(np.linspace(0.1, 2.0, 2 * 16)).reshape(2, 4, 4),
                   requires_grad=True, dtype=np.float64)
        return (lambda: weighted_sum(T.maxpool2d(x), np.random.default_rng(7))), [x]

    return GradCheckResult("maxpool2d", _check_over_seeds(build), TOL_PRIMITIVE)


def check_global_avg_pool() -> GradCheckResult:
    def build(rng):
        x = _randn(rng, 2, 4, 4)
        return (lambda: weighted_sum(T.global_avg_pool(x), np.random.default_rng(7))), [x]

    return GradCheckResult("global_avg_pool", _check_over_seeds(build), TOL_PRIMITIVE)


def check_relu() -> GradCheckResult:
    def build(rng):
        base = rng.standard_normal((3, 5))
        base[np.abs(base) < 0.05] += 0.1   # stay clear of the kink
        x = Tensor(base, requires_grad=True, dtype=np.float64)
        return (lambda: weighted_sum(T.relu(x), np.random.default_rng(7))), [x]

    return GradCheckResult("relu", _check_over_seeds(build), TOL_PRIMITIVE)


def check_softmax_rows() -> GradCheckResult:
    def build(rng):
        x = _randn(rng, 4, 6)
        return (lambda: weighted_sum(T.softmax_rows(x), np.random.default_rng(7))), [x]

    return GradCheckResult("softmax_rows", _check_over_seeds(build), TOL_PRIMITIVE)


def check_log_softmax() -> GradCheckResult:
    def build(rng):
        x = _randn(rng, 2, 5, 3, 3)
        return (lambda: weighted_sum(T.log_softmax(x, axis=1), np.random.default_rng(7))), [x]

    return GradCheckResult("log_softmax", _check_over_seeds(build), TOL_PRIMITIVE)


def check_sigmoid() -> GradCheckResult:
    def build(rng):
        x = _randn(rng, 3, 4)
        return (lambda: weighted_sum(T.sigmoid(x), np.random.default_rng(7))), [x]

    return GradCheckResult("sigmoid", _check_over_seeds(build), TOL_PRIMITIVE)


def check_bilinear_resize() -> GradCheckResult:
    def build(rng):
        x = _randn(rng, 2, 4, 4)
        return (lambda: weighted_sum(T.bilinear_resize(x, 0.5), np.random.default_rng(7))), [x]

    return GradCheckResult("bilinear_resize_down", _check_over_seeds(build), TOL_PRIMITIVE)


def check_bilinear_resize_up() -> GradCheckResult:
    def build(rng):
        x = _randn(rng, 2, 4, 4)
        return (lambda: weighted_sum(T.bilinear_resize(x, 2.0), np.random.default_rng(7))), [x]

    return GradCheckResult("bilinear_resize_up", _check_over_seeds(build), TOL_PRIMITIVE)


def check_batchnorm_train() -> GradCheckResult:
    def build(rng):
        x = _randn(rng, 2, 3, 4, 4)   # batch >= 2 in train mode
        with T.default_dtype(np.float64):
            bn = BatchNorm2d(3)
        return (lambda: weighted_sum(
            T.batchnorm2d(x, bn.gamma, bn.beta, bn.running_mean.copy(), bn.running_var.copy(), training=True),
            np.random.default_rng(7))), [x, bn.gamma, bn.beta]

    return GradCheckResult("batchnorm2d_train", _check_over_seeds(build), TOL_COMPOSITE)


def check_backward_composite_ops() -> GradCheckResult:
    """Mixed elementwise/mul/div/sum chain."""
    def build(rng):
        a = _positive(rng, 3, 3)
        b = _positive(rng, 3, 3)
        def f():
            num = (a * b + a).sum(axis=0)
            den = (b * b).sum(axis=0) + 1.0
            return (num / den).sum()
        return f, [a, b]

    return GradCheckResult("elementwise_chain", _check_over_seeds(build), TOL_PRIMITIVE)


def check_residual_block() -> GradCheckResult:
    def build(rng):
        with T.default_dtype(np.float64):
            block = ResidualBlock(4, 4, rng=rng)
            block.train()
            x = _randn(rng, 2, 4, 6, 6)
        return (lambda: weighted_sum(block(x), np.random.default_rng(7))), [x] + block.parameters()

    return GradCheckResult("residual_block", _check_over_seeds(build, max_samples=24), TOL_COMPOSITE)


def check_hourglass() -> GradCheckResult:
    def build(rng):
        with T.default_dtype(np.float64):
            hg = Hourglass(4, depth=2, rng=rng)
            hg.train()
            x = _randn(rng, 2, 4, 8, 8)
        return (lambda: weighted_sum(hg(x), np.random.default_rng(7))), [x] + hg.parameters()

    return GradCheckResult("hourglass_d2", _check_over_seeds(build, max_samples=8), TOL_COMPOSITE)


def check_spin_block() -> GradCheckResult:
    def build(rng):
        with T.default_dtype(np.float64):
            block = SpinBlock(4, m=2, n=2, s=2, rng=rng)
            # Perturb the zero-initialized transforms so their gradients flow
            # through non-degenerate values.
            block.w_s.weight.data = rng.standard_normal(block.w_s.weight.shape) * 0.3
            block.phi_out.weight.data = rng.standard_normal(block.phi_out.weight.shape) * 0.3
            x = _randn(rng, 1, 4, 4, 4)
        return (lambda: weighted_sum(block(x), np.random.default_rng(7))), [x] + block.parameters()

    return GradCheckResult("spin_block", _check_over_seeds(build), TOL_PRIMITIVE)


def check_spin_pyramid() -> GradCheckResult:
    def build(rng):
        with T.default_dtype(np.float64):
            pyr = SpinPyramid(4, m=2, n=2, s=2, rng=rng)
            for blk in (pyr.block_full, pyr.block_half, pyr.block_quarter):
                blk.w_s.weight.data = rng.standard_normal(blk.w_s.weight.shape) * 0.3
                blk.phi_out.weight.data = rng.standard_normal(blk.phi_out.weight.shape) * 0.3
            x = _randn(rng, 1, 4, 8, 8)
        return (lambda: weighted_sum(pyr(x), np.random.default_rng(7))), [x] + pyr.parameters()

    return GradCheckResult("spin_pyramid", _check_over_seeds(build, max_samples=16), TOL_COMPOSITE)


def check_losses() -> GradCheckResult:
    def build(rng):
        seg_logits = {s: _randn(rng, 1, 1, int(8 * s), int(8 * s)) for s in (1.0, 0.5, 0.25)}
        orient_logits = {s: _randn(rng, 1, 37, int(8 * s), int(8 * s)) for s in (1.0, 0.5, 0.25)}
        seg_gts = {s: rng.integers(0, 2, size=(1, int(8 * s), int(8 * s))).astype(np.float64)
                   for s in (1.0, 0.5, 0.25)}
        orient_gts = {s: rng.integers(0, 37, size=(1, int(8 * s), int(8 * s)))
                      for s in (1.0, 0.5, 0.25)}
        def f():
            l1, _ = seg_loss(seg_logits, seg_gts)
            l2, _ = orientation_loss(orient_logits, orient_gts)
            return l1 + l2
        return f, list(seg_logits.values()) + list(orient_logits.values())

    return GradCheckResult("losses", _check_over_seeds(build, max_samples=24), TOL_PRIMITIVE)


def check_full_network() -> GradCheckResult:
    """End-to-end toy config: one backward pass against sampled differences."""
    def build(rng):
        with T.default_dtype(np.float64):
            cfg = NetworkConfig(input_size=32, base_width=8, hourglass_depth=1,
                                num_hourglasses=1, spin="full")
            model = RoadNet(cfg, seed=int(rng.integers(0, 1000)))
            model.train()
            x = _randn(rng, 2, 3, 32, 32)
        def f():
            out = model(x)
            return weighted_sum(out.seg[1.0], np.random.default_rng(7)) + \
                   weighted_sum(out.orient[0.25], np.random.default_rng(8))
        return f, [x]

    return GradCheckResult("full_network_input", _check_over_seeds(build, max_samples=6), TOL_COMPOSITE)


ALL_CHECKS = (
    check_matmul,
    check_conv2d,
    check_conv2d_stride2,
    check_conv_transpose2d,
    check_maxpool,
    check_global_avg_pool,
    check_relu,
    check_sigmoid,
    check_softmax_rows,
    check_log_softmax,
    check_bilinear_resize,
    check_bilinear_resize_up,
    check_batchnorm_train,
    check_backward_composite_ops,
    check_residual_block,
    check_spin_block,
    check_spin_pyramid,
    check_hourglass,
    check_losses,
    check_full_network,
)


def run_all_checks() -> list[GradCheckResult]:
    return [fn() for fn in ALL_CHECKS]
