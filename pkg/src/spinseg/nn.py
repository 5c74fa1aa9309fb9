"""Reusable network blocks: parameter containers, conv/norm layers,
residual blocks, and the recursive hourglass module."""

from __future__ import annotations

from typing import Iterator, Optional

import numpy as np

from . import tensor as T
from .tensor import Tensor


class Module:
    """Minimal parameter container with named traversal.

    Assigning a `Tensor` with `requires_grad` registers it as a parameter;
    assigning a `Module` registers a child. Running-stat buffers go through
    `register_buffer`.
    """

    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_children", {})
        object.__setattr__(self, "_buffers", {})
        object.__setattr__(self, "training", True)

    def __setattr__(self, name, value):
        if isinstance(value, Tensor) and value.requires_grad:
            self._params[name] = value
        elif isinstance(value, Module):
            self._children[name] = value
        object.__setattr__(self, name, value)

    def register_buffer(self, name: str, value: np.ndarray):
        self._buffers[name] = value
        object.__setattr__(self, name, value)

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, p in self._params.items():
            yield prefix + name, p
        for cname, child in self._children.items():
            yield from child.named_parameters(prefix + cname + ".")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for name, b in self._buffers.items():
            yield prefix + name, b
        for cname, child in self._children.items():
            yield from child.named_buffers(prefix + cname + ".")

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    def train(self, mode: bool = True):
        object.__setattr__(self, "training", mode)
        for child in self._children.values():
            child.train(mode)
        return self

    def eval(self):
        return self.train(False)

    def count_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def state_dict(self) -> dict[str, np.ndarray]:
        state = {name: p.data for name, p in self.named_parameters()}
        state.update({name: b for name, b in self.named_buffers()})
        return state

    def load_state_dict(self, state: dict[str, np.ndarray]):
        own = dict(self.named_parameters())
        bufs = dict(self.named_buffers())
        missing = (set(own) | set(bufs)) - set(state)
        extra = set(state) - (set(own) | set(bufs))
        if missing or extra:
            raise ValueError(f"state dict mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
        for name, p in own.items():
            if p.data.shape != state[name].shape:
                raise ValueError(f"shape mismatch for {name}: {p.data.shape} vs {state[name].shape}")
            p.data = state[name].astype(p.data.dtype, copy=True)
        for name, b in bufs.items():
            b[...] = state[name]

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def he_normal(rng: np.random.Generator, shape: tuple, fan_in: int) -> np.ndarray:
    return rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)


class Conv2d(Module):
    """`bias=False` for convs feeding a norm layer (the shift is redundant
    there and its gradient degenerates to exactly zero)."""

    def __init__(self, cin: int, cout: int, k: int, stride: int = 1, padding: int = 0,
                 rng: Optional[np.random.Generator] = None, zero_init: bool = False,
                 bias: bool = True):
        super().__init__()
        self.stride = stride
        self.padding = padding
        dtype = T.current_dtype()
        if zero_init:
            w = np.zeros((cout, cin, k, k))
        else:
            w = he_normal(rng, (cout, cin, k, k), cin * k * k)
        self.weight = Tensor(w.astype(dtype), requires_grad=True)
        self.bias = Tensor(np.zeros(cout, dtype=dtype), requires_grad=True) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return T.conv2d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)


class ConvTranspose2d(Module):
    """Stride-2 upsampling convolution (k=4 by default, k=2 supported)."""

    def __init__(self, cin: int, cout: int, k: int = 4, rng: Optional[np.random.Generator] = None,
                 bias: bool = True):
        super().__init__()
        dtype = T.current_dtype()
        w = he_normal(rng, (cin, cout, k, k), cin * k * k)
        self.weight = Tensor(w.astype(dtype), requires_grad=True)
        self.bias = Tensor(np.zeros(cout, dtype=dtype), requires_grad=True) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return T.conv_transpose2d(x, self.weight, self.bias, stride=2)


class Linear(Module):
    """Dense map on the last axis; equivalent to a 1x1 convolution."""

    def __init__(self, cin: int, cout: int, rng: Optional[np.random.Generator] = None, zero_init: bool = False):
        super().__init__()
        dtype = T.current_dtype()
        w = np.zeros((cout, cin)) if zero_init else he_normal(rng, (cout, cin), cin)
        self.weight = Tensor(w.astype(dtype), requires_grad=True)
        self.bias = Tensor(np.zeros(cout, dtype=dtype), requires_grad=True)

    def forward(self, x: Tensor) -> Tensor:
        return T.matmul(x, T.transpose(self.weight)) + self.bias


class BatchNorm2d(Module):
    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5):
        super().__init__()
        dtype = T.current_dtype()
        self.momentum = momentum
        self.eps = eps
        self.gamma = Tensor(np.ones(channels, dtype=dtype), requires_grad=True)
        self.beta = Tensor(np.zeros(channels, dtype=dtype), requires_grad=True)
        self.register_buffer("running_mean", np.zeros(channels, dtype=np.float64))
        self.register_buffer("running_var", np.ones(channels, dtype=np.float64))

    def forward(self, x: Tensor) -> Tensor:
        return T.batchnorm2d(x, self.gamma, self.beta, self.running_mean, self.running_var,
                             training=self.training, momentum=self.momentum, eps=self.eps)


class ResidualBlock(Module):
    """conv3x3-bn-relu-conv3x3-bn plus an identity (or projected) skip.

    No activation after the add, so zero-initialized convs make the block
    the exact identity when cin == cout.
    """

    def __init__(self, cin: int, cout: int, rng: Optional[np.random.Generator] = None):
        super().__init__()
        self.conv1 = Conv2d(cin, cout, 3, padding=1, rng=rng, bias=False)
        self.bn1 = BatchNorm2d(cout)
        self.conv2 = Conv2d(cout, cout, 3, padding=1, rng=rng, bias=False)
        self.bn2 = BatchNorm2d(cout)
        self.proj = Conv2d(cin, cout, 1, rng=rng) if cin != cout else None

    def forward(self, x: Tensor) -> Tensor:
        y = self.bn2(self.conv2(T.relu(self.bn1(self.conv1(x)))))
        skip = x if self.proj is None else self.proj(x)
        return y + skip


class Hourglass(Module):
    """Symmetric encoder-decoder: residuals and max pooling on the way
    down, bilinear upsampling with per-scale additive skips on the way up.
    Shape-preserving; requires H and W divisible by 2**depth.
    """

    def __init__(self, channels: int, depth: int = 4, rng: Optional[np.random.Generator] = None):
        super().__init__()
        self.depth = depth
        self.skip = ResidualBlock(channels, channels, rng=rng)
        self.down = ResidualBlock(channels, channels, rng=rng)
        if depth > 1:
            self.inner = Hourglass(channels, depth - 1, rng=rng)
        else:
            self.inner = ResidualBlock(channels, channels, rng=rng)
        self.up = ResidualBlock(channels, channels, rng=rng)

    def forward(self, x: Tensor) -> Tensor:
        h, w = x.shape[-2], x.shape[-1]
        divisor = 2 ** self.depth
        if h % divisor or w % divisor:
            raise ValueError(f"hourglass depth {self.depth} needs spatial extents divisible by {divisor}, got {h}x{w}")
        hi = self.skip(x)
        lo = self.down(T.maxpool2d(x))
        lo = self.inner(lo)
        lo = self.up(lo)
        return hi + T.bilinear_resize(lo, 2.0)
