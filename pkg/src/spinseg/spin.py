"""Graph reasoning over spatial and interaction spaces.

A feature map X in R^{C x H x W} is flattened to its L x C matrix view
(L = H*W). Two reasoning paths produce additive corrections:

* spatial: a data-dependent row-stochastic L x L similarity matrix
  A_S = softmax_rows(relu(phi_s(X)) diag(lam(X)) relu(phi_s(X))^T)
  drives one graph-convolution step X_S = relu(A_S X W_S);

* interaction: features are projected into an N-node, S-state latent
  space V = theta(X)^T phi_i(X), reasoned over with a learned node
  adjacency, Z = ((I - A_I) V) W_I, and projected back through the same
  theta(X) followed by a C-channel output map.

The fused output is relu(X_S + X + X_I). The pyramid variant runs the
reasoning paths at scales 1, 1/2 and 1/4 around one shared identity path:
relu(X + agg(D_1, up2(D_2), up4(D_4))), agg in {mean, sum}, where D_k is
the scale-k correction. With W_S and the output projection zero-initialized
(the default) every correction is exactly zero, so both the single block
and the pyramid start as the identity on non-negative input.

All 1x1 transforms are dense maps on the matrix view; parameter shapes
and counts match the equivalent 1x1 convolutions.
"""

from __future__ import annotations

from typing import Optional

import numpy as np

from . import tensor as T
from .nn import Linear, Module
from .tensor import Tensor

VARIANTS = ("none", "spatial", "interaction", "full")


def _as_matrix(x: Tensor) -> tuple[Tensor, tuple, bool]:
    """(N,C,H,W) or (C,H,W) -> (B,L,C) plus info to restore the map."""
    squeeze = x.ndim == 3
    shape = (1,) + x.shape if squeeze else x.shape
    n, c, h, w = shape
    xm = T.transpose(T.reshape(x, (n, c, h * w)))
    return xm, (n, c, h, w), squeeze


def _as_map(xm: Tensor, shape: tuple, squeeze: bool) -> Tensor:
    n, c, h, w = shape
    out = T.reshape(T.transpose(xm), (n, c, h, w))
    return T.reshape(out, (c, h, w)) if squeeze else out


def spatial_similarity(xm: Tensor, phi_s: Linear, lam: Linear) -> Tensor:
    """Row-stochastic similarity over the L positions, (B,L,L)."""
    p = T.relu(phi_s(xm))                       # (B,L,M)
    pooled = xm.mean(axis=-2)                   # (B,C) global average over positions
    diag = lam(pooled)                          # (B,M), no activation; may be negative
    scaled = p * T.reshape(diag, (diag.shape[0], 1, diag.shape[-1]))
    return T.softmax_rows(T.matmul(scaled, T.transpose(p)))


def spatial_reason(xm: Tensor, a_s: Tensor, w_s: Linear) -> Tensor:
    """One graph-convolution step: relu(A_S @ X @ W_S)."""
    return T.relu(w_s(T.matmul(a_s, xm)))


def project_interaction(xm: Tensor, theta: Linear, phi_i: Linear) -> tuple[Tensor, Tensor]:
    """Project to the latent space; returns (V, theta(X)) since the
    projection matrix is reused on the way back.

    The position contraction is averaged (1/L) rather than summed:
    without it the latent magnitudes and their gradients grow linearly
    with the map size, which destabilizes training at every scale of the
    pyramid.
    """
    l = xm.shape[-2]
    th = theta(xm)                                        # (B,L,N)
    ph = phi_i(xm)                                        # (B,L,S)
    return T.matmul(T.transpose(th), ph) / float(l), th   # (B,N,S)


def interaction_reason(v: Tensor, a_i: Tensor, w_i: Linear) -> Tensor:
    """((I - A_I) V) W_I; the identity term is the optimization skip."""
    n = a_i.shape[-1]
    eye = Tensor(np.eye(n, dtype=a_i.dtype))
    return w_i(T.matmul(eye - a_i, v))


def reverse_project(z: Tensor, th: Tensor, phi_out: Linear) -> Tensor:
    """Back to the coordinate space: Y = theta(X) @ Z, then X_I = phi_out(Y)."""
    return phi_out(T.matmul(th, z))


class SpinBlock(Module):
    """Single-scale reasoning block over a C-channel feature map.

    `variant` selects the active paths: "spatial", "interaction" or
    "full" (both). Latent sizes default to M = C/2, N = C/4, S = C/2.
    """

    def __init__(self, channels: int, m: Optional[int] = None, n: Optional[int] = None,
                 s: Optional[int] = None, variant: str = "full",
                 rng: Optional[np.random.Generator] = None):
        super().__init__()
        if variant not in ("spatial", "interaction", "full"):
            raise ValueError(f"unknown variant {variant!r}")
        self.variant = variant
        self.channels = channels
        self.m = m or max(1, channels // 2)
        self.n = n or max(1, channels // 4)
        self.s = s or max(1, channels // 2)
        dtype = T.current_dtype()
        if variant in ("spatial", "full"):
            self.phi_s = Linear(channels, self.m, rng=rng)
            self.lam = Linear(channels, self.m, rng=rng)
            self.w_s = Linear(channels, channels, zero_init=True)
        if variant in ("interaction", "full"):
            self.theta = Linear(channels, self.n, rng=rng)
            self.phi_i = Linear(channels, self.s, rng=rng)
            # Small random adjacency keeps (I - A_I) near identity at start.
            self.a_i = Tensor((rng.standard_normal((self.n, self.n)) / self.n).astype(dtype),
                              requires_grad=True)
            self.w_i = Linear(self.s, self.s, rng=rng)
            self.phi_out = Linear(self.s, channels, zero_init=True)

    def correction(self, xm: Tensor) -> Tensor:
        """X_S + X_I on the matrix view; exactly zero at initialization."""
        parts = []
        if self.variant in ("spatial", "full"):
            a_s = spatial_similarity(xm, self.phi_s, self.lam)
            parts.append(spatial_reason(xm, a_s, self.w_s))
        if self.variant in ("interaction", "full"):
            v, th = project_interaction(xm, self.theta, self.phi_i)
            z = interaction_reason(v, self.a_i, self.w_i)
            parts.append(reverse_project(z, th, self.phi_out))
        out = parts[0]
        for p in parts[1:]:
            out = out + p
        return out

    def forward(self, x: Tensor) -> Tensor:
        """relu(X_S + X + X_I) on the feature map."""
        xm, shape, squeeze = _as_matrix(x)
        fused = xm + self.correction(xm)
        return T.relu(_as_map(fused, shape, squeeze))


class SpinPyramid(Module):
    """Reasoning at scales 1, 1/2 and 1/4 with independent weights per
    scale, fused around a single identity path. Requires H, W divisible
    by 4."""

    def __init__(self, channels: int, m: Optional[int] = None, n: Optional[int] = None,
                 s: Optional[int] = None, variant: str = "full", aggregate: str = "mean",
                 rng: Optional[np.random.Generator] = None):
        super().__init__()
        if aggregate not in ("mean", "sum"):
            raise ValueError(f"unknown aggregation {aggregate!r}")
        self.aggregate = aggregate
        self.block_full = SpinBlock(channels, m, n, s, variant, rng)
        self.block_half = SpinBlock(channels, m, n, s, variant, rng)
        self.block_quarter = SpinBlock(channels, m, n, s, variant, rng)

    def forward(self, x: Tensor) -> Tensor:
        h, w = x.shape[-2], x.shape[-1]
        if h % 4 or w % 4:
            raise ValueError(f"pyramid needs spatial extents divisible by 4, got {h}x{w}")
        xm, shape, squeeze = _as_matrix(x)
        d1 = _as_map(self.block_full.correction(xm), shape, squeeze)

        x2 = T.bilinear_resize(x, 0.5)
        m2, s2, q2 = _as_matrix(x2)
        d2 = T.bilinear_resize(_as_map(self.block_half.correction(m2), s2, q2), 2.0)

        x4 = T.bilinear_resize(x, 0.25)
        m4, s4, q4 = _as_matrix(x4)
        d4 = T.bilinear_resize(_as_map(self.block_quarter.correction(m4), s4, q4), 4.0)

        delta = d1 + d2 + d4
        if self.aggregate == "mean":
            delta = delta / 3.0
        return T.relu(x + delta)


def spin_param_count(channels: int, m: Optional[int] = None, n: Optional[int] = None,
                     s: Optional[int] = None, variant: str = "full") -> int:
    """Closed-form learnable-parameter count of one block (with biases)."""
    c = channels
    m = m or max(1, c // 2)
    n = n or max(1, c // 4)
    s = s or max(1, c // 2)
    total = 0
    if variant in ("spatial", "full"):
        total += (c * m + m) + (c * m + m) + (c * c + c)          # phi_s, lam, w_s
    if variant in ("interaction", "full"):
        total += (c * n + n) + (c * s + s) + n * n + (s * s + s) + (s * c + c)
    return total


def pyramid_param_count(channels: int, m: Optional[int] = None, n: Optional[int] = None,
                        s: Optional[int] = None, variant: str = "full") -> int:
    if variant == "none":
        return 0
    return 3 * spin_param_count(channels, m, n, s, variant)
