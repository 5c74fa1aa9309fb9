"""Training objectives: soft-IoU segmentation loss and per-pixel
orientation cross-entropy, both summed over the three output scales."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .model import SCALES, ModelOutput
from .tensor import Tensor


@dataclass
class LossReport:
    seg_per_scale: dict[float, float] = field(default_factory=dict)
    orient_per_scale: dict[float, float] = field(default_factory=dict)
    seg: float = 0.0
    orient: float = 0.0
    final: float = 0.0


def soft_iou(pred: Tensor, gt: Tensor) -> Tensor:
    """Differentiable IoU relaxation: sum(p*g) / (sum(p) + sum(g) - sum(p*g)).

    `pred` must hold probabilities in [0,1]; `gt` is binary. Both empty
    (all-zero gt and all-zero pred) scores 1 by convention.
    """
    pd = pred.data
    if pd.min() < 0.0 or pd.max() > 1.0:
        raise ValueError(f"pred must lie in [0,1], got range [{pd.min()}, {pd.max()}]")
    inter = (pred * gt).sum()
    union = pred.sum() + gt.sum() - inter
    if union.item() == 0.0:
        return Tensor(np.asarray(1.0, dtype=pd.dtype))
    return inter / union


def seg_loss(outputs: dict[float, Tensor], gts: dict[float, np.ndarray]) -> tuple[Tensor, dict[float, float]]:
    """Sum over scales of (1 - soft_iou(sigmoid(logits), gt)); in [0, 3]."""
    per_scale: dict[float, float] = {}
    total = None
    for s in SCALES:
        prob = T.sigmoid(outputs[s])
        prob = T.reshape(prob, (prob.size,))
        gt = Tensor(gts[s].reshape(-1).astype(prob.dtype))
        if gt.size != prob.size:
            raise ValueError(f"gt/pred size mismatch at scale {s}: {gt.size} vs {prob.size}")
        term = 1.0 - soft_iou(prob, gt)
        per_scale[s] = term.item()
        total = term if total is None else total + term
    return total, per_scale


def orientation_loss(outputs: dict[float, Tensor], gts: dict[float, np.ndarray]) -> tuple[Tensor, dict[float, float]]:
    """Per-pixel mean cross-entropy over the 37 classes, summed over scales.

    `gts[s]` holds integer class maps (N,H,W) or (H,W) with values in
    {0..36}; every pixel contributes with equal weight.
    """
    per_scale: dict[float, float] = {}
    total = None
    for s in SCALES:
        logits = outputs[s]
        gt = gts[s]
        n_classes = logits.shape[-3]
        if gt.min() < 0 or gt.max() >= n_classes:
            raise ValueError(f"orientation class out of range [0, {n_classes}): min {gt.min()}, max {gt.max()}")
        ls = T.log_softmax(logits, axis=-3)
        gt4 = gt[None] if gt.ndim == 2 else gt
        onehot = np.zeros(ls.shape if ls.ndim == 4 else (1,) + ls.shape, dtype=ls.dtype)
        np.put_along_axis(onehot, gt4[:, None, :, :].astype(np.int64), 1.0, axis=1)
        if ls.ndim == 3:
            onehot = onehot[0]
        n_pix = gt4.shape[0] * gt4.shape[1] * gt4.shape[2]
        term = -(ls * Tensor(onehot)).sum() / float(n_pix)
        per_scale[s] = term.item()
        total = term if total is None else total + term
    return total, per_scale


def total_loss(out: ModelOutput, seg_gts: dict[float, np.ndarray],
               orient_gts: dict[float, np.ndarray]) -> tuple[Tensor, LossReport]:
    """L_final = L_seg + L_orient; returns the scalar and a float report."""
    l_seg, seg_scales = seg_loss(out.seg, seg_gts)
    l_orient, orient_scales = orientation_loss(out.orient, orient_gts)
    final = l_seg + l_orient
    report = LossReport(
        seg_per_scale=seg_scales,
        orient_per_scale=orient_scales,
        seg=l_seg.item(),
        orient=l_orient.item(),
        final=final.item(),
    )
    return final, report
