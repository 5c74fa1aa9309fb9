"""End-to-end road segmentation network.

Layout: a downscale-by-4 feature extractor, a stack of hourglass modules
at the bottleneck, then two branches. The segmentation branch applies the
reasoning pyramid once on its quarter-resolution trunk and upsamples with
transpose convolutions, emitting 1-channel logits at scales 1/4, 1/2 and
1; the orientation branch mirrors it with 37-channel heads and no
reasoning pyramid. Channel width halves at each upsampling stage.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import tensor as T
from .nn import BatchNorm2d, Conv2d, ConvTranspose2d, Hourglass, Module, ResidualBlock
from .spin import SpinPyramid, pyramid_param_count
from .tensor import Tensor

SCALES = (1.0, 0.5, 0.25)
N_ORIENT_CLASSES = 37


@dataclass
class NetworkConfig:
    input_size: int = 256
    in_channels: int = 3
    base_width: int = 64
    hourglass_depth: int = 4
    num_hourglasses: int = 2
    spin: str = "full"              # none | spatial | interaction | full
    spin_m_ratio: float = 0.5
    spin_n_ratio: float = 0.25
    spin_s_ratio: float = 0.5
    pyramid_agg: str = "mean"       # mean | sum
    n_orientation_classes: int = N_ORIENT_CLASSES

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.spin not in ("none", "spatial", "interaction", "full"):
            raise ValueError(f"unknown spin variant {self.spin!r}")
        divisor = 4 * 2 ** self.hourglass_depth
        if self.input_size % divisor:
            raise ValueError(f"input size {self.input_size} must be divisible by {divisor} "
                             f"(4 x 2^depth for depth {self.hourglass_depth})")
        if self.n_orientation_classes != N_ORIENT_CLASSES:
            raise ValueError(f"orientation head is fixed at {N_ORIENT_CLASSES} classes")

    def spin_dims(self) -> tuple[int, int, int]:
        w = self.base_width
        return (max(1, int(w * self.spin_m_ratio)),
                max(1, int(w * self.spin_n_ratio)),
                max(1, int(w * self.spin_s_ratio)))


@dataclass
class ModelOutput:
    """Logit maps keyed by scale: seg 1-channel, orient 37-channel."""
    seg: dict[float, Tensor]
    orient: dict[float, Tensor]

    def tensors(self) -> list[Tensor]:
        return [self.seg[s] for s in SCALES] + [self.orient[s] for s in SCALES]


class FeatureExtractor(Module):
    """7x7 stride-2 conv, residual block, max pooling, then two residual
    modules: 3 x H x W -> width x H/4 x W/4."""

    def __init__(self, cfg: NetworkConfig, rng: np.random.Generator):
        super().__init__()
        w = cfg.base_width
        self.conv = Conv2d(cfg.in_channels, w, 7, stride=2, padding=3, rng=rng, bias=False)
        self.bn = BatchNorm2d(w)
        self.res1 = ResidualBlock(w, w, rng=rng)
        self.res2 = ResidualBlock(w, w, rng=rng)
        self.res3 = ResidualBlock(w, w, rng=rng)

    def forward(self, x: Tensor) -> Tensor:
        h, w = x.shape[-2], x.shape[-1]
        if h % 4 or w % 4:
            raise ValueError(f"input extents must be divisible by 4, got {h}x{w}")
        y = T.relu(self.bn(self.conv(x)))
        y = self.res1(y)
        y = T.maxpool2d(y)
        return self.res3(self.res2(y))


class _UpStage(Module):
    """Transpose conv (x2) + refine conv, both with norm and relu."""

    def __init__(self, cin: int, cout: int, rng: np.random.Generator):
        super().__init__()
        self.up = ConvTranspose2d(cin, cout, 4, rng=rng, bias=False)
        self.bn_up = BatchNorm2d(cout)
        self.refine = Conv2d(cout, cout, 3, padding=1, rng=rng, bias=False)
        self.bn_refine = BatchNorm2d(cout)

    def forward(self, x: Tensor) -> Tensor:
        y = T.relu(self.bn_up(self.up(x)))
        return T.relu(self.bn_refine(self.refine(y)))


class _Branch(Module):
    """Shared decoder pattern: quarter-res trunk (optionally with the
    reasoning pyramid), two upsampling stages, a 1x1 head per scale."""

    def __init__(self, cfg: NetworkConfig, out_channels: int, with_spin: bool, rng: np.random.Generator):
        super().__init__()
        w = cfg.base_width
        self.trunk = ResidualBlock(w, w, rng=rng)
        if with_spin and cfg.spin != "none":
            m, n, s = cfg.spin_dims()
            self.pyramid = SpinPyramid(w, m, n, s, variant=cfg.spin, aggregate=cfg.pyramid_agg, rng=rng)
        else:
            self.pyramid = None
        self.head_quarter = Conv2d(w, out_channels, 1, rng=rng)
        self.stage_half = _UpStage(w, w // 2, rng=rng)
        self.head_half = Conv2d(w // 2, out_channels, 1, rng=rng)
        self.stage_full = _UpStage(w // 2, w // 4, rng=rng)
        self.head_full = Conv2d(w // 4, out_channels, 1, rng=rng)

    def forward(self, f: Tensor) -> dict[float, Tensor]:
        t = T.relu(self.trunk(f))
        if self.pyramid is not None:
            t = self.pyramid(t)
        out = {0.25: self.head_quarter(t)}
        u = self.stage_half(t)
        out[0.5] = self.head_half(u)
        v = self.stage_full(u)
        out[1.0] = self.head_full(v)
        return out


class RoadNet(Module):
    """Full model per the two-branch design; see module docstring."""

    def __init__(self, cfg: NetworkConfig, seed: int = 0):
        super().__init__()
        rng = np.random.default_rng(seed)
        self.cfg = cfg
        self.extractor = FeatureExtractor(cfg, rng)
        self.hourglasses = _ModuleList(
            [Hourglass(cfg.base_width, cfg.hourglass_depth, rng=rng) for _ in range(cfg.num_hourglasses)]
        )
        self.seg_branch = _Branch(cfg, 1, with_spin=True, rng=rng)
        self.orient_branch = _Branch(cfg, cfg.n_orientation_classes, with_spin=False, rng=rng)

    def features(self, image: Tensor) -> Tensor:
        f = self.extractor(image)
        for hg in self.hourglasses.items:
            f = hg(f)
        return f

    def forward(self, image: Tensor) -> ModelOutput:
        f = self.features(image)
        return ModelOutput(seg=self.seg_branch(f), orient=self.orient_branch(f))

    def spin_overhead(self) -> int:
        """Parameters added by the reasoning pyramid (0 for variant none)."""
        m, n, s = self.cfg.spin_dims()
        return pyramid_param_count(self.cfg.base_width, m, n, s, self.cfg.spin)


class _ModuleList(Module):
    def __init__(self, items: list[Module]):
        super().__init__()
        self.items = items
        for i, mod in enumerate(items):
            setattr(self, f"m{i}", mod)


def count_parameters(model: Module) -> int:
    return model.count_parameters()


def build_model(cfg: NetworkConfig, seed: int = 0) -> RoadNet:
    return RoadNet(cfg, seed=seed)
