"""Command-line surface.

Verbs: synth | train | eval | predict | gradcheck | ablate.
Exit codes: 0 success, 1 validation error (bad arguments, config or
inputs), 2 runtime failure (including failed gradient checks).
"""

from __future__ import annotations

import argparse
import shutil
import sys
from pathlib import Path

import numpy as np

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_RUNTIME = 2


class ValidationError(Exception):
    pass


def _prepare_outdir(path: Path, force: bool) -> Path:
    if path.exists() and any(path.iterdir()):
        if not force:
            raise ValidationError(f"output directory {path} is not empty (use --force to overwrite)")
        shutil.rmtree(path)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _load_run_config(args) -> "RunConfig":
    from .config import RunConfig, load_config

    cfg = load_config(args.config) if args.config else RunConfig()
    if args.seed is not None:
        cfg.train.seed = args.seed
        cfg.data.synth_seed = args.seed
    return cfg


def cmd_synth(args) -> int:
    from .data import generate_synthetic, save_dataset

    out = _prepare_outdir(Path(args.out), args.force)
    samples = generate_synthetic(args.seed or 0, args.count, args.size,
                                 occlusions=not args.no_occlusions)
    n_val = int(round(args.count * args.val_fraction))
    splits = ["train"] * (args.count - n_val) + ["val"] * n_val
    save_dataset(samples, splits, out, seed=args.seed or 0)
    print(f"wrote {args.count} samples ({args.count - n_val} train / {n_val} val) to {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    from .checkpoint import load_checkpoint, restore_model, restore_optimizer
    from .config import save_config
    from .data import generate_synthetic, load_dataset
    from .model import RoadNet
    from .optim import SGD
    from .train import fit

    cfg = _load_run_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_config(cfg, out / "config.ini")

    if cfg.data.synth_count > 0:
        samples = generate_synthetic(cfg.data.synth_seed, cfg.data.synth_count, cfg.data.synth_size)
        n_val = max(1, len(samples) // 5)
        train_samples, val_samples = samples[:-n_val], samples[-n_val:]
    else:
        if not cfg.data.dir:
            raise ValidationError("config [data] must set dir or synth_count > 0")
        train_samples = load_dataset(cfg.data.dir, split="train")
        val_samples = load_dataset(cfg.data.dir, split="val")
        if not train_samples:
            raise ValidationError(f"dataset at {cfg.data.dir} has no training samples")

    start_epoch = 0
    optimizer = None
    if args.resume:
        model, header, tensors = restore_model(args.resume)
        optimizer = SGD(list(model.named_parameters()), lr=cfg.train.initial_lr,
                        momentum=cfg.train.momentum, weight_decay=cfg.train.weight_decay)
        restore_optimizer(optimizer, tensors)
        start_epoch = int(header["meta"].get("epoch", 0))
        print(f"resuming from {args.resume} at epoch {start_epoch}")
    else:
        model = RoadNet(cfg.network, seed=cfg.train.seed)

    history = fit(model, train_samples, val_samples, cfg, out_dir=out,
                  start_epoch=start_epoch, optimizer=optimizer)
    print(f"trained {history.iterations} iterations; final train F1 {history.final_train_f1:.4f}; "
          f"log and checkpoint in {out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    from .checkpoint import restore_model
    from .data import load_dataset
    from .metrics import REPORT_COLUMNS, evaluate_predictions
    from .train import predict_probs

    model, _, _ = restore_model(args.checkpoint)
    model.eval()
    samples = load_dataset(args.data, split=args.split)
    if not samples:
        raise ValidationError(f"no samples with split {args.split!r} in {args.data}")
    probs = [predict_probs(model, s) for s in samples]
    report = evaluate_predictions(probs, [s.mask for s in samples])
    out = Path(args.out) if args.out else None
    csv_text = ",".join(REPORT_COLUMNS) + "\n" + report.csv_row() + "\n"
    if out:
        out.mkdir(parents=True, exist_ok=True)
        (out / "metrics.csv").write_text(csv_text)
        (out / "metrics.txt").write_text(report.text_block() + "\n")
    print(report.text_block())
    return EXIT_OK


def cmd_predict(args) -> int:
    from .checkpoint import restore_model
    from .data import load_image, save_raster
    from .train import predict_probs
    from .data import Sample
    from . import tensor as T
    from .tensor import Tensor

    model, _, _ = restore_model(args.checkpoint)
    model.eval()
    image = load_image(args.image)
    h, w = image.shape[1], image.shape[2]
    with T.no_grad():
        out = model(Tensor(image[None]))
    logits = out.seg[1.0].data[0, 0]
    mask = (1.0 / (1.0 + np.exp(-logits.astype(np.float64))) >= args.threshold).astype(np.uint8)
    out_path = Path(args.out)
    save_raster(mask, out_path)
    print(f"wrote road mask ({h}x{w}) to {out_path}")
    if args.orient_out:
        orient = out.orient[1.0].data[0].argmax(axis=0).astype(np.uint8)
        from PIL import Image as PILImage

        PILImage.fromarray(orient, mode="L").save(args.orient_out)
        print(f"wrote orientation argmax to {args.orient_out}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .checks import run_all_checks

    results = run_all_checks()
    width = max(len(r.name) for r in results)
    failures = 0
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        if not r.passed:
            failures += 1
        print(f"{status}  {r.name:<{width}s}  max_rel_err={r.max_rel_error:.3e}  tol={r.tolerance:g}")
    print(f"{len(results) - failures}/{len(results)} gradient checks passed")
    return EXIT_OK if failures == 0 else EXIT_RUNTIME


def cmd_ablate(args) -> int:
    from .experiments import run_ablation

    cfg = _load_run_config(args)
    out = _prepare_outdir(Path(args.out), args.force)
    result = run_ablation(cfg, out, n_train=args.train_count, n_val=args.val_count)
    print(f"variant parameter counts: {result['params']}")
    print(f"final val F1 per variant: { {k: round(v, 4) for k, v in result['final_f1'].items()} }")
    best = max(result["final_f1"], key=result["final_f1"].get)
    print(f"best variant at final epoch: {best} "
          f"(directional expectation: full >= none; stochastic at toy scale)")
    print(f"comparison CSV: {out / 'ablation.csv'}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spinseg",
        description="Road segmentation with spatial/interaction-space graph reasoning",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_required=True):
        p.add_argument("--config", type=str, default=None, help="run config file (INI)")
        p.add_argument("--seed", type=int, default=None, help="override seeds from the config")
        p.add_argument("--out", type=str, required=out_required, help="output directory")
        p.add_argument("--force", action="store_true", help="overwrite a non-empty output directory")

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    common(p)
    p.add_argument("--count", type=int, default=80)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--val-fraction", type=float, default=0.2)
    p.add_argument("--no-occlusions", action="store_true")
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("train", help="train a model")
    common(p)
    p.add_argument("--resume", type=str, default=None, help="checkpoint to resume from")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    common(p, out_required=False)
    p.add_argument("--checkpoint", type=str, required=True)
    p.add_argument("--data", type=str, required=True)
    p.add_argument("--split", type=str, default="val")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("predict", help="predict a road mask for one image")
    common(p)
    p.add_argument("--checkpoint", type=str, required=True)
    p.add_argument("--image", type=str, required=True)
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--orient-out", type=str, default=None,
                   help="also write the orientation argmax map here")
    p.set_defaults(fn=cmd_predict)

    p = sub.add_parser("gradcheck", help="run the gradient-check table")
    common(p, out_required=False)
    p.set_defaults(fn=cmd_gradcheck)

    p = sub.add_parser("ablate", help="run the 4-variant reasoning ablation")
    common(p)
    p.add_argument("--train-count", type=int, default=64)
    p.add_argument("--val-count", type=int, default=16)
    p.set_defaults(fn=cmd_ablate)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (ValidationError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except Exception as exc:  # runtime failure
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
