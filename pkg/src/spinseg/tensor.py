"""Dense-tensor engine with tape-based reverse-mode autodiff.

Every other module in the package is pure math on top of `Tensor`: a numpy
array plus an optional gradient buffer. Each differentiable op records a
closure that pushes the output gradient back to its inputs; `backward()`
replays those closures in reverse topological order and accumulates into
`.grad` (the caller zeroes between steps).

Training runs in float32. `default_dtype(np.float64)` switches newly
created tensors to float64, which is what the finite-difference gradient
checker needs; ops themselves preserve the dtype of their inputs.
"""

from __future__ import annotations

import contextlib
from typing import Iterable, Optional, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "no_grad",
    "default_dtype",
    "finite_checks",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "matmul",
    "transpose",
    "reshape",
    "relu",
    "sigmoid",
    "softmax_rows",
    "log_softmax",
    "tsum",
    "tmean",
    "conv2d",
    "conv_transpose2d",
    "maxpool2d",
    "global_avg_pool",
    "bilinear_resize",
    "batchnorm2d",
]

_GRAD_ENABLED = True
_DEFAULT_DTYPE = np.float32
_CHECK_FINITE = False


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block (inference / metrics)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


@contextlib.contextmanager
def default_dtype(dtype):
    """Set the dtype used for newly created tensors (float32 or float64)."""
    global _DEFAULT_DTYPE
    dtype = np.dtype(dtype).type
    if dtype not in (np.float32, np.float64):
        raise ValueError(f"unsupported dtype {dtype}")
    prev = _DEFAULT_DTYPE
    _DEFAULT_DTYPE = dtype
    try:
        yield
    finally:
        _DEFAULT_DTYPE = prev


def current_dtype():
    return _DEFAULT_DTYPE


@contextlib.contextmanager
def finite_checks(enabled: bool = True):
    """Assert that every forward op produces finite values (debug aid)."""
    global _CHECK_FINITE
    prev = _CHECK_FINITE
    _CHECK_FINITE = enabled
    try:
        yield
    finally:
        _CHECK_FINITE = prev


_KINK_TRACE: Optional[list] = None


@contextlib.contextmanager
def kink_trace():
    """Record the piecewise-linear branch decisions (relu masks, pooling
    argmaxes) of every forward op run inside the block. The gradient
    checker compares traces of the two central-difference evaluations and
    skips elements whose perturbation crosses a kink, where finite
    differences are undefined."""
    global _KINK_TRACE
    prev = _KINK_TRACE
    _KINK_TRACE = trace = []
    try:
        yield trace
    finally:
        _KINK_TRACE = prev


class Tensor:
    """N-dimensional array with an optional gradient buffer.

    `data` is always a numpy float array (row-major). Tensors created by
    ops hold references to their parents and a backward closure; leaves
    (parameters, inputs) have neither.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward_fn")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            raise TypeError("wrap raw arrays, not Tensors")
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(_DEFAULT_DTYPE)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self._parents: tuple = ()
        self._backward_fn = None

    # -- introspection -------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _scalar_err(self)

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    # -- autodiff ------------------------------------------------------
    def backward(self):
        """Run reverse-mode accumulation from this scalar.

        Gradients accumulate into `.grad` of every reachable tensor with
        `requires_grad`; the caller is responsible for zeroing them.
        """
        if self.data.size != 1:
            raise ValueError(f"backward requires a scalar loss, got shape {self.data.shape}")
        topo: list[Tensor] = []
        seen = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward_fn is not None and node.grad is not None:
                node._backward_fn(node.grad)

    # -- operator sugar ------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], (tuple, list)) else shape)

    def transpose(self):
        return transpose(self)


def _scalar_err(t):
    raise ValueError(f"item() needs a single-element tensor, got shape {t.data.shape}")


def _as_tensor(x, like: Optional[Tensor] = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.data.dtype if like is not None else _DEFAULT_DTYPE
    return Tensor(np.asarray(x, dtype=dtype))


def _make(data: np.ndarray, parents: Sequence[Tensor], backward_fn) -> Tensor:
    """Wrap an op result, recording the tape entry when grads are live."""
    if _CHECK_FINITE and not np.all(np.isfinite(data)):
        raise FloatingPointError("non-finite values produced by a forward op")
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward_fn = backward_fn
    return out


def _accum(t: Tensor, g: np.ndarray):
    # Functional accumulation: grads are never mutated in place, so the
    # first store may alias the upstream buffer safely.
    if t.requires_grad:
        t.grad = g if t.grad is None else t.grad + g


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `g` down to `shape` (inverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ---------------------------------------------------------------------
# elementwise / structural ops
# ---------------------------------------------------------------------

def add(a, b) -> Tensor:
    a = _as_tensor(a, like=b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, like=a)
    out = a.data + b.data

    def bwd(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(g, b.data.shape))

    return _make(out, (a, b), bwd)


def sub(a, b) -> Tensor:
    a = _as_tensor(a, like=b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, like=a)
    out = a.data - b.data

    def bwd(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(-g, b.data.shape))

    return _make(out, (a, b), bwd)


def mul(a, b) -> Tensor:
    a = _as_tensor(a, like=b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, like=a)
    out = a.data * b.data

    def bwd(g):
        _accum(a, _unbroadcast(g * b.data, a.data.shape))
        _accum(b, _unbroadcast(g * a.data, b.data.shape))

    return _make(out, (a, b), bwd)


def div(a, b) -> Tensor:
    a = _as_tensor(a, like=b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, like=a)
    out = a.data / b.data

    def bwd(g):
        _accum(a, _unbroadcast(g / b.data, a.data.shape))
        _accum(b, _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))

    return _make(out, (a, b), bwd)


def neg(a: Tensor) -> Tensor:
    def bwd(g):
        _accum(a, -g)

    return _make(-a.data, (a,), bwd)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product with numpy batching; dA = dC @ B^T, dB = A^T @ dC."""
    a = _as_tensor(a)
    b = _as_tensor(b)
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ValueError(f"matmul needs rank >= 2 operands, got {a.data.shape} and {b.data.shape}")
    if a.data.shape[-1] != b.data.shape[-2]:
        raise ValueError(f"matmul shape mismatch: {a.data.shape} @ {b.data.shape}")
    out = a.data @ b.data

    def bwd(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        _accum(a, _unbroadcast(ga, a.data.shape))
        _accum(b, _unbroadcast(gb, b.data.shape))

    return _make(out, (a, b), bwd)


def transpose(a: Tensor) -> Tensor:
    """Swap the last two axes."""
    if a.data.ndim < 2:
        raise ValueError(f"transpose needs rank >= 2, got {a.data.shape}")
    out = np.swapaxes(a.data, -1, -2)

    def bwd(g):
        _accum(a, np.swapaxes(g, -1, -2))

    return _make(np.ascontiguousarray(out), (a,), bwd)


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    out = a.data.reshape(shape)

    def bwd(g):
        _accum(a, g.reshape(a.data.shape))

    return _make(out, (a,), bwd)


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    if _KINK_TRACE is not None:
        _KINK_TRACE.append(mask)
    out = np.where(mask, a.data, a.data.dtype.type(0))

    def bwd(g):
        _accum(a, g * mask)

    return _make(out, (a,), bwd)


def sigmoid(a: Tensor) -> Tensor:
    # Split by sign to stay overflow-free for large magnitudes.
    x = a.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)

    def bwd(g):
        _accum(a, g * out * (1.0 - out))

    return _make(out, (a,), bwd)


def softmax_rows(a: Tensor) -> Tensor:
    """Softmax over the last axis with max-subtraction; rows sum to 1."""
    if a.data.ndim < 2:
        raise ValueError(f"softmax_rows needs rank >= 2, got {a.data.shape}")
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=-1, keepdims=True)

    def bwd(g):
        dot = (g * out).sum(axis=-1, keepdims=True)
        _accum(a, out * (g - dot))

    return _make(out, (a,), bwd)


def log_softmax(a: Tensor, axis: int) -> Tensor:
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse

    def bwd(g):
        _accum(a, g - np.exp(out) * g.sum(axis=axis, keepdims=True))

    return _make(out, (a,), bwd)


def tsum(a: Tensor, axis=None, keepdims=False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def bwd(g):
        if axis is None:
            _accum(a, np.full_like(a.data, g))
        else:
            ge = g if keepdims else np.expand_dims(g, axis)
            _accum(a, np.broadcast_to(ge, a.data.shape))

    return _make(np.asarray(out), (a,), bwd)


def tmean(a: Tensor, axis=None, keepdims=False) -> Tensor:
    n = a.data.size if axis is None else np.prod([a.data.shape[i] for i in np.atleast_1d(axis)])
    s = tsum(a, axis=axis, keepdims=keepdims)
    return div(s, float(n))


# ---------------------------------------------------------------------
# spatial ops (conv / pool / resize / norm)
# ---------------------------------------------------------------------

def _to4d(x: np.ndarray):
    if x.ndim == 3:
        return x[None], True
    if x.ndim == 4:
        return x, False
    raise ValueError(f"expected a (C,H,W) or (N,C,H,W) array, got shape {x.shape}")


def _im2col(xp: np.ndarray, k: int, stride: int, ho: int, wo: int) -> np.ndarray:
    """Gather k*k patches: (N,C,Hp,Wp) -> (N, C*k*k, ho*wo)."""
    n, c = xp.shape[:2]
    cols = np.empty((n, c, k, k, ho, wo), dtype=xp.dtype)
    for i in range(k):
        for j in range(k):
            cols[:, :, i, j] = xp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride]
    return cols.reshape(n, c * k * k, ho * wo)


def _col2im(cols: np.ndarray, n: int, c: int, k: int, stride: int, hp: int, wp: int, ho: int, wo: int) -> np.ndarray:
    """Adjoint of `_im2col`: scatter-add patches back to (N,C,Hp,Wp)."""
    out = np.zeros((n, c, hp, wp), dtype=cols.dtype)
    cols = cols.reshape(n, c, k, k, ho, wo)
    for i in range(k):
        for j in range(k):
            out[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += cols[:, :, i, j]
    return out


def conv2d(x: Tensor, w: Tensor, bias: Optional[Tensor] = None, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of (N,C,H,W) [or (C,H,W)] with (Cout,Cin,k,k) weights."""
    xd, squeeze = _to4d(x.data)
    cout, cin, kh, kw = w.data.shape
    if kh != kw or kh not in (1, 3, 7):
        raise ValueError(f"unsupported kernel {kh}x{kw}; expected square k in {{1,3,7}}")
    n, c, h, wdt = xd.shape
    if c != cin:
        raise ValueError(f"channel mismatch: input has {c}, weight expects {cin}")
    k = kh
    ho = (h + 2 * padding - k) // stride + 1
    wo = (wdt + 2 * padding - k) // stride + 1
    if h + 2 * padding < k or wdt + 2 * padding < k or ho < 1 or wo < 1:
        raise ValueError(f"invalid conv geometry: input {h}x{wdt}, k={k}, stride={stride}, padding={padding}")
    xp = np.pad(xd, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else xd
    hp, wp = xp.shape[2], xp.shape[3]
    cols = _im2col(xp, k, stride, ho, wo)
    w2 = w.data.reshape(cout, cin * k * k)
    if n == 1:
        out2 = (w2 @ cols[0])[None]
    else:
        out2 = w2 @ cols
    out = out2.reshape(n, cout, ho, wo)
    if bias is not None:
        out = out + bias.data.reshape(1, cout, 1, 1)
    if squeeze:
        out = out[0]

    def bwd(g):
        g4 = g[None] if squeeze else g
        gm = g4.reshape(n, cout, ho * wo)
        if w.requires_grad:
            dw = np.matmul(gm, cols.transpose(0, 2, 1)).sum(axis=0)
            _accum(w, dw.reshape(w.data.shape))
        if bias is not None and bias.requires_grad:
            _accum(bias, g4.sum(axis=(0, 2, 3)))
        if x.requires_grad:
            dcols = w2.T @ gm if n > 1 else (w2.T @ gm[0])[None]
            dxp = _col2im(dcols, n, cin, k, stride, hp, wp, ho, wo)
            dx = dxp[:, :, padding : hp - padding, padding : wp - padding] if padding else dxp
            _accum(x, dx[0] if squeeze else dx)

    parents = (x, w) if bias is None else (x, w, bias)
    return _make(out, parents, bwd)


def conv_transpose2d(x: Tensor, w: Tensor, bias: Optional[Tensor] = None, stride: int = 2) -> Tensor:
    """Spatial doubling: (N,Cin,H,W) with (Cin,Cout,k,k) weights -> (N,Cout,2H,2W).

    Supports stride 2 with k in {2,4}; padding is derived as (k-2)//2 so the
    output extent is exactly twice the input. Backward follows conv2d's
    forward gather pattern.
    """
    if stride != 2:
        raise ValueError(f"unsupported stride {stride}; conv_transpose2d is fixed to stride 2")
    xd, squeeze = _to4d(x.data)
    cin, cout, kh, kw = w.data.shape
    if kh != kw or kh not in (2, 4):
        raise ValueError(f"unsupported kernel {kh}x{kw}; expected square k in {{2,4}}")
    n, c, h, wdt = xd.shape
    if c != cin:
        raise ValueError(f"channel mismatch: input has {c}, weight expects {cin}")
    k = kh
    pad = (k - 2) // 2
    ho, wo = 2 * h, 2 * wdt
    hp, wp = ho + 2 * pad, wo + 2 * pad
    w2 = w.data.reshape(cin, cout * k * k)
    xm = xd.reshape(n, cin, h * wdt)
    cols = w2.T @ xm if n > 1 else (w2.T @ xm[0])[None]
    outp = _col2im(cols, n, cout, k, stride, hp, wp, h, wdt)
    out = outp[:, :, pad : hp - pad, pad : wp - pad] if pad else outp
    if bias is not None:
        out = out + bias.data.reshape(1, cout, 1, 1)
    if squeeze:
        out = out[0]

    def bwd(g):
        g4 = g[None] if squeeze else g
        gp = np.pad(g4, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else g4
        gcols = _im2col(gp, k, stride, h, wdt)
        if x.requires_grad:
            dxm = w2 @ gcols if n > 1 else (w2 @ gcols[0])[None]
            _accum(x, dxm.reshape(xd.shape)[0] if squeeze else dxm.reshape(xd.shape))
        if w.requires_grad:
            dw2 = np.matmul(xm, gcols.transpose(0, 2, 1)).sum(axis=0)
            _accum(w, dw2.reshape(w.data.shape))
        if bias is not None and bias.requires_grad:
            _accum(bias, g4.sum(axis=(0, 2, 3)))

    parents = (x, w) if bias is None else (x, w, bias)
    return _make(out, parents, bwd)


def maxpool2d(x: Tensor, k: int = 2, stride: int = 2) -> Tensor:
    """Non-overlapping max pooling; backward routes to the (first) argmax."""
    if k != stride:
        raise ValueError(f"maxpool2d supports k == stride only, got k={k}, stride={stride}")
    xd, squeeze = _to4d(x.data)
    n, c, h, w = xd.shape
    if h % k or w % k:
        raise ValueError(f"spatial extents {h}x{w} not divisible by stride {k}")
    ho, wo = h // k, w // k
    windows = xd.reshape(n, c, ho, k, wo, k).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, ho, wo, k * k)
    idx = windows.argmax(axis=-1)
    if _KINK_TRACE is not None:
        _KINK_TRACE.append(idx)
    out = np.take_along_axis(windows, idx[..., None], axis=-1)[..., 0]
    if squeeze:
        out = out[0]

    def bwd(g):
        g4 = g[None] if squeeze else g
        dwin = np.zeros((n, c, ho, wo, k * k), dtype=g4.dtype)
        np.put_along_axis(dwin, idx[..., None], g4[..., None], axis=-1)
        dx = dwin.reshape(n, c, ho, wo, k, k).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h, w)
        _accum(x, dx[0] if squeeze else dx)

    return _make(out, (x,), bwd)


def global_avg_pool(x: Tensor) -> Tensor:
    """(N,C,H,W) -> (N,C) or (C,H,W) -> (C,): mean over the spatial axes."""
    xd, squeeze = _to4d(x.data)
    n, c, h, w = xd.shape
    out = xd.mean(axis=(2, 3))
    if squeeze:
        out = out[0]

    def bwd(g):
        g4 = g[None] if squeeze else g
        dx = np.broadcast_to(g4[:, :, None, None] / (h * w), xd.shape)
        _accum(x, dx[0] if squeeze else dx)

    return _make(out, (x,), bwd)


def _interp_matrix(n_out: int, n_in: int, dtype) -> np.ndarray:
    """1-D bilinear weights, align-corners=false convention."""
    m = np.zeros((n_out, n_in), dtype=dtype)
    scale = n_in / n_out
    for i in range(n_out):
        src = (i + 0.5) * scale - 0.5
        src = min(max(src, 0.0), n_in - 1.0)
        i0 = int(np.floor(src))
        i1 = min(i0 + 1, n_in - 1)
        t = src - i0
        m[i, i0] += 1.0 - t
        m[i, i1] += t
    return m


def bilinear_resize(x: Tensor, scale: float) -> Tensor:
    """Bilinear resampling by `scale` (1/4, 1/2, 1, 2, 4), align-corners=false."""
    xd, squeeze = _to4d(x.data)
    n, c, h, w = xd.shape
    ho, wo = int(round(h * scale)), int(round(w * scale))
    if ho < 1 or wo < 1:
        raise ValueError(f"target extent {ho}x{wo} must be >= 1 (input {h}x{w}, scale {scale})")
    ry = _interp_matrix(ho, h, xd.dtype)
    rx = _interp_matrix(wo, w, xd.dtype)
    # out[n,c] = Ry @ X[n,c] @ Rx^T over the flattened (N*C) leading axis.
    flat = xd.reshape(n * c, h, w)
    out = np.matmul(np.matmul(ry, flat), rx.T).reshape(n, c, ho, wo)
    if squeeze:
        out = out[0]

    def bwd(g):
        g4 = (g[None] if squeeze else g).reshape(n * c, ho, wo)
        dx = np.matmul(np.matmul(ry.T, g4), rx).reshape(xd.shape)
        _accum(x, dx[0] if squeeze else dx)

    return _make(out, (x,), bwd)


def batchnorm2d(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> Tensor:
    """Per-channel normalization over batch+space.

    Train mode normalizes with batch statistics and updates the running
    buffers in place (unbiased variance, momentum 0.1); eval mode uses the
    running buffers.
    """
    xd, squeeze = _to4d(x.data)
    n, c, h, w = xd.shape
    if gamma.data.shape != (c,) or beta.data.shape != (c,):
        raise ValueError(f"stats shape mismatch: expected ({c},), got {gamma.data.shape}/{beta.data.shape}")
    if running_mean.shape != (c,) or running_var.shape != (c,):
        raise ValueError(f"running stats shape mismatch for {c} channels")
    m = n * h * w
    if training:
        mean = xd.mean(axis=(0, 2, 3))
        var = xd.var(axis=(0, 2, 3))
        unbiased = var * (m / max(m - 1, 1))
        running_mean *= 1.0 - momentum
        running_mean += momentum * mean
        running_var *= 1.0 - momentum
        running_var += momentum * unbiased
    else:
        mean = running_mean.astype(xd.dtype)
        var = running_var.astype(xd.dtype)
    invstd = 1.0 / np.sqrt(var + eps)
    xhat = (xd - mean[None, :, None, None]) * invstd[None, :, None, None]
    out = gamma.data[None, :, None, None] * xhat + beta.data[None, :, None, None]
    if squeeze:
        out = out[0]

    def bwd(g):
        g4 = g[None] if squeeze else g
        if gamma.requires_grad:
            _accum(gamma, (g4 * xhat).sum(axis=(0, 2, 3)))
        if beta.requires_grad:
            _accum(beta, g4.sum(axis=(0, 2, 3)))
        if x.requires_grad:
            gi = gamma.data[None, :, None, None] * invstd[None, :, None, None]
            if training:
                gsum = g4.sum(axis=(0, 2, 3))[None, :, None, None]
                gxsum = (g4 * xhat).sum(axis=(0, 2, 3))[None, :, None, None]
                dx = gi * (g4 - gsum / m - xhat * gxsum / m)
            else:
                dx = gi * g4
            _accum(x, dx[0] if squeeze else dx)

    return _make(out, (x, gamma, beta), bwd)
