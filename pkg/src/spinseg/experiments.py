"""Runnable experiment harnesses: the variant ablation, the paired
with/without-reasoning convergence comparison, and the small overfit run.
All are deterministic under their seeds and write CSV artifacts."""

from __future__ import annotations

import copy
import csv
import dataclasses
from pathlib import Path
from typing import Optional, Sequence

from .config import RunConfig
from .data import Sample, generate_synthetic
from .model import RoadNet
from .spin import VARIANTS
from .train import TrainHistory, fit


def _with_variant(cfg: RunConfig, variant: str) -> RunConfig:
    out = copy.deepcopy(cfg)
    out.network = dataclasses.replace(out.network, spin=variant)
    return out


def _split(samples: Sequence[Sample], n_train: int) -> tuple[list[Sample], list[Sample]]:
    return list(samples[:n_train]), list(samples[n_train:])


def run_ablation(cfg: RunConfig, out_dir: Path, n_train: int = 64, n_val: int = 16) -> dict:
    """Train the four reasoning variants (none / spatial / interaction /
    full) on one fixed synthetic split with a shared seed.

    Writes `ablation.csv` with per-epoch validation F1 per variant and
    `ablation_params.csv` with parameter counts and deltas vs the
    baseline. Returns the collected curves and counts.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    samples = generate_synthetic(cfg.data.synth_seed, n_train + n_val, cfg.data.synth_size)
    train_samples, val_samples = _split(samples, n_train)

    curves: dict[str, list[float]] = {}
    params: dict[str, int] = {}
    final_f1: dict[str, float] = {}
    for variant in VARIANTS:
        vcfg = _with_variant(cfg, variant)
        model = RoadNet(vcfg.network, seed=vcfg.train.seed)
        params[variant] = model.count_parameters()
        hist = fit(model, train_samples, val_samples, vcfg, out_dir=out_dir / variant)
        curves[variant] = hist.val_f1
        final_f1[variant] = hist.val_f1[-1] if hist.val_f1 else 0.0

    n_epochs = max(len(c) for c in curves.values())
    with open(out_dir / "ablation.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch"] + [f"val_f1_{v}" for v in VARIANTS])
        for e in range(n_epochs):
            writer.writerow([e] + [f"{curves[v][e]:.6f}" if e < len(curves[v]) else "" for v in VARIANTS])
    with open(out_dir / "ablation_params.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["variant", "param_count", "delta_vs_none", "final_val_f1"])
        for v in VARIANTS:
            writer.writerow([v, params[v], params[v] - params["none"], f"{final_f1[v]:.6f}"])
    return {"curves": curves, "params": params, "final_f1": final_f1}


def run_convergence(cfg: RunConfig, out_dir: Path, n_train: int = 16, n_val: int = 8,
                    epochs: Optional[int] = None) -> dict:
    """Paired runs with and without the reasoning pyramid, matched seeds;
    emits per-epoch validation accuracy curves to `convergence.csv`."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if epochs is not None:
        cfg = copy.deepcopy(cfg)
        cfg.train.epochs = epochs
    samples = generate_synthetic(cfg.data.synth_seed, n_train + n_val, cfg.data.synth_size)
    train_samples, val_samples = _split(samples, n_train)

    histories: dict[str, TrainHistory] = {}
    for label, variant in (("spin", "full"), ("baseline", "none")):
        vcfg = _with_variant(cfg, variant)
        model = RoadNet(vcfg.network, seed=vcfg.train.seed)
        histories[label] = fit(model, train_samples, val_samples, vcfg, out_dir=out_dir / label)

    n_epochs = max(len(h.val_f1) for h in histories.values())
    with open(out_dir / "convergence.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "val_f1_spin", "val_f1_baseline", "val_iou_spin", "val_iou_baseline"])
        for e in range(n_epochs):
            row = [e]
            for key in ("val_f1", "val_iou"):
                for label in ("spin", "baseline"):
                    vals = getattr(histories[label], key)
                    row.append(f"{vals[e]:.6f}" if e < len(vals) else "")
            # column order: f1 spin, f1 baseline, iou spin, iou baseline
            writer.writerow([row[0], row[1], row[2], row[3], row[4]])
    return {label: h.val_f1 for label, h in histories.items()}


def run_overfit(cfg: RunConfig, out_dir: Optional[Path] = None, n_samples: int = 8,
                iterations: int = 500) -> TrainHistory:
    """Memorization check: a correct implementation overfits a handful of
    synthetic samples to near-perfect train F1 within a few hundred steps."""
    cfg = copy.deepcopy(cfg)
    cfg.train.augment = False
    cfg.train.epochs = (iterations * cfg.train.batch_size) // n_samples + 1
    cfg.train.lr_steps = (int(cfg.train.epochs * 0.85),)
    samples = generate_synthetic(cfg.data.synth_seed, n_samples, cfg.data.synth_size)
    model = RoadNet(cfg.network, seed=cfg.train.seed)
    return fit(model, samples, [], cfg, out_dir=out_dir, max_iterations=iterations)
