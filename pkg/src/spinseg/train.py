"""Training loop: shuffled mini-batches, augmentation, multi-scale loss,
SGD steps under the step schedule, CSV logging and per-epoch checkpoints.

Log format (one row per logging interval, val fields filled at epoch end):

    epoch,iter,lr,L_seg,L_orient,L_final,val_F1,val_IoU
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import tensor as T
from .checkpoint import save_checkpoint
from .config import RunConfig
from .data import Sample, augment, downscale_gt
from .losses import total_loss
from .model import SCALES, RoadNet
from .optim import SGD
from .tensor import Tensor

LOG_COLUMNS = ("epoch", "iter", "lr", "L_seg", "L_orient", "L_final", "val_F1", "val_IoU")


@dataclass
class TrainHistory:
    rows: list[dict] = field(default_factory=list)
    val_f1: list[float] = field(default_factory=list)
    val_iou: list[float] = field(default_factory=list)
    final_train_f1: float = 0.0
    iterations: int = 0


def make_batch(samples: Sequence[Sample], indices: Sequence[int],
               augment_seed: Optional[int] = None) -> tuple[Tensor, dict, dict]:
    """Stack samples into a batch and prepare per-scale ground truth."""
    chosen = [samples[i] for i in indices]
    if augment_seed is not None:
        chosen = [augment(s, augment_seed + j) for j, s in enumerate(chosen)]
    images = np.stack([s.image for s in chosen]).astype(T.current_dtype())
    masks = np.stack([s.mask for s in chosen])
    orients = np.stack([s.orient for s in chosen])
    seg_gts = {s: downscale_gt(masks, s, "mask") for s in SCALES}
    orient_gts = {s: downscale_gt(orients, s, "orient") for s in SCALES}
    return Tensor(images), seg_gts, orient_gts


def predict_probs(model: RoadNet, sample: Sample) -> np.ndarray:
    """Full-scale road probability map for one sample (eval, no tape)."""
    with T.no_grad():
        out = model(Tensor(sample.image[None].astype(T.current_dtype())))
        logits = out.seg[1.0].data[0, 0]
    return 1.0 / (1.0 + np.exp(-logits.astype(np.float64)))


def eval_f1_iou(model: RoadNet, samples: Sequence[Sample], threshold: float = 0.5) -> tuple[float, float]:
    """Micro-averaged F1 and accurate IoU over a sample list."""
    was_training = model.training
    model.eval()
    tp = fp = fn = 0
    for s in samples:
        prob = predict_probs(model, s)
        pred = prob >= threshold
        gt = s.mask.astype(bool)
        tp += int(np.count_nonzero(pred & gt))
        fp += int(np.count_nonzero(pred & ~gt))
        fn += int(np.count_nonzero(~pred & gt))
    if was_training:
        model.train()
    precision = tp / (tp + fp) if tp + fp else (1.0 if fn == 0 else 0.0)
    recall = tp / (tp + fn) if tp + fn else (1.0 if fp == 0 else 0.0)
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    iou = tp / (tp + fp + fn) if tp + fp + fn else 1.0
    return f1, iou


def fit(model: RoadNet, train_samples: Sequence[Sample], val_samples: Sequence[Sample],
        cfg: RunConfig, out_dir: Optional[Path] = None, start_epoch: int = 0,
        optimizer: Optional[SGD] = None, max_iterations: Optional[int] = None) -> TrainHistory:
    """Train for `cfg.train.epochs` epochs (or until `max_iterations`).

    Deterministic under a fixed seed: batch order reseeds per epoch, so a
    resume from an epoch checkpoint replays the identical remainder.
    """
    if not train_samples:
        raise ValueError("training dataset is empty")
    tc = cfg.train
    schedule = tc.schedule()
    if optimizer is None:
        optimizer = SGD(list(model.named_parameters()), lr=schedule.lr_at(start_epoch),
                        momentum=tc.momentum, weight_decay=tc.weight_decay)
    history = TrainHistory()
    log_fh = None
    writer = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        log_path = out_dir / "log.csv"
        fresh = start_epoch == 0 or not log_path.exists()
        log_fh = open(log_path, "a" if not fresh else "w", newline="")
        writer = csv.writer(log_fh)
        if fresh:
            writer.writerow(LOG_COLUMNS)

    def log_row(epoch, it, lr, l_seg, l_orient, l_final, vf1="", viou=""):
        row = {"epoch": epoch, "iter": it, "lr": lr, "L_seg": l_seg,
               "L_orient": l_orient, "L_final": l_final, "val_F1": vf1, "val_IoU": viou}
        history.rows.append(row)
        if writer is not None:
            writer.writerow([row[c] for c in LOG_COLUMNS])
            log_fh.flush()

    iteration = start_epoch * max(1, len(train_samples) // tc.batch_size)
    model.train()
    done = False
    for epoch in range(start_epoch, tc.epochs):
        lr = schedule.lr_at(epoch)
        optimizer.lr = lr
        rng = np.random.default_rng(tc.seed * 100003 + epoch)
        order = rng.permutation(len(train_samples))
        n_batches = max(1, len(order) // tc.batch_size)
        for b in range(n_batches):
            idx = order[b * tc.batch_size : (b + 1) * tc.batch_size]
            if len(idx) == 0:
                idx = order[:1]
            aug_seed = int(rng.integers(0, 2**31)) if tc.augment else None
            images, seg_gts, orient_gts = make_batch(train_samples, idx, aug_seed)
            out = model(images)
            loss, report = total_loss(out, seg_gts, orient_gts)
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            iteration += 1
            if iteration % tc.log_interval == 0:
                log_row(epoch, iteration, lr, f"{report.seg:.6f}",
                        f"{report.orient:.6f}", f"{report.final:.6f}")
            if max_iterations is not None and iteration >= max_iterations:
                done = True
                break
        val_f1, val_iou = (eval_f1_iou(model, val_samples) if val_samples else (0.0, 0.0))
        history.val_f1.append(val_f1)
        history.val_iou.append(val_iou)
        last = history.rows[-1] if history.rows else None
        log_row(epoch, iteration, lr,
                last["L_seg"] if last else "", last["L_orient"] if last else "",
                last["L_final"] if last else "", f"{val_f1:.6f}", f"{val_iou:.6f}")
        if out_dir is not None:
            save_checkpoint(out_dir / "checkpoint.bin", model, config=model.cfg,
                            optimizer=optimizer,
                            meta={"epoch": epoch + 1, "iteration": iteration,
                                  "seed": tc.seed})
        if done:
            break
    history.iterations = iteration
    history.final_train_f1 = eval_f1_iou(model, train_samples)[0]
    if log_fh is not None:
        log_fh.close()
    return history
