"""Central-difference gradient verification.

Checks run in float64 (finite differences are meaningless in float32) with
h = 1e-3. Small tensors are perturbed exhaustively; large composites check
a seeded random subset of elements per tensor. The reported error is

    max_i |a_i - n_i| / max(max|a|, max|n|, 1e-12)

over the checked elements, where `a` is the tape gradient and `n` the
numeric one.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor

DEFAULT_H = 1e-3
FULL_COVERAGE_LIMIT = 256


@dataclass
class GradCheckResult:
    name: str
    max_rel_error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance


def _numeric_grad(f: Callable[[], Tensor], t: Tensor, h: float, indices: np.ndarray) -> np.ndarray:
    """Central differences per element; elements whose +/-h evaluations
    cross a piecewise-linear kink (relu gate flip, pooling argmax change)
    come back as NaN since the difference quotient is meaningless there."""
    from .tensor import kink_trace

    flat = t.data.reshape(-1)
    grads = np.zeros(len(indices), dtype=flat.dtype)
    for out_i, i in enumerate(indices):
        orig = flat[i]
        flat[i] = orig + h
        with kink_trace() as trace_p:
            fp = f().item()
        flat[i] = orig - h
        with kink_trace() as trace_m:
            fm = f().item()
        flat[i] = orig
        crossed = len(trace_p) != len(trace_m) or any(
            not np.array_equal(a, b) for a, b in zip(trace_p, trace_m)
        )
        grads[out_i] = np.nan if crossed else (fp - fm) / (2.0 * h)
    return grads


def check_gradients(
    f: Callable[[], Tensor],
    tensors: Sequence[Tensor],
    h: float = DEFAULT_H,
    max_samples: int = FULL_COVERAGE_LIMIT,
    seed: int = 0,
) -> float:
    """Compare tape gradients of the scalar `f()` against central differences.

    `tensors` must be float64 leaves that `f` reads on every call. Returns
    the worst relative error over all checked elements.
    """
    for t in tensors:
        if t.data.dtype != np.float64:
            raise ValueError("gradient checks require float64 tensors")
        t.zero_grad()
    loss = f()
    loss.backward()
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in tensors]
    rng = np.random.default_rng(seed)
    worst = 0.0
    total = kept = 0
    for t, a in zip(tensors, analytic):
        n_el = t.data.size
        if n_el <= max_samples:
            indices = np.arange(n_el)
        else:
            indices = rng.choice(n_el, size=max_samples, replace=False)
        numeric = _numeric_grad(f, t, h, indices)
        valid = ~np.isnan(numeric)
        total += len(indices)
        kept += int(valid.sum())
        if not valid.any():
            continue
        a_sel = a.reshape(-1)[indices][valid]
        n_sel = numeric[valid]
        scale = max(np.abs(a_sel).max(initial=0.0), np.abs(n_sel).max(initial=0.0), 1e-12)
        err = float(np.abs(a_sel - n_sel).max(initial=0.0) / scale)
        worst = max(worst, err)
    if total and kept < 0.5 * total:
        raise RuntimeError(f"gradient check degenerate: only {kept}/{total} elements "
                           "avoid kink crossings; choose a better-conditioned test point")
    return worst


def weighted_sum(out: Tensor, rng: np.random.Generator) -> Tensor:
    """Reduce an arbitrary output to a scalar with fixed random weights."""
    w = Tensor(rng.standard_normal(out.shape).astype(out.dtype))
    return (out * w).sum()
