"""Synthetic road scenes, ground-truth preparation, tiling, augmentation
and raster I/O.

The generator draws a random planar road layout (waypoints joined by
straight polyline segments, widths 1-4 px at size 64 and scaled with the
raster), renders it over a textured background with building-like
distractor rectangles, and optionally paints occluder strips across the
imagery only; the mask always reflects the true road support. Centerline
polylines are kept on the sample for orientation ground truth.

Orientation classes: 0 is background; classes 1..36 are 5-degree bins of
the undirected tangent angle in [0, 180), class = 1 + floor(theta/5).
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from PIL import Image

N_ANGLE_BINS = 36
BIN_DEGREES = 180.0 / N_ANGLE_BINS


@dataclass
class Sample:
    """One training example; rasters share H x W."""

    image: np.ndarray                  # float32 (3,H,W) in [0,1]
    mask: np.ndarray                   # uint8 (H,W) in {0,1}
    orient: np.ndarray                 # uint8 (H,W) in {0..36}
    centerlines: Optional[list[np.ndarray]] = None   # (n_pts,2) float arrays, (row,col)

    def __post_init__(self):
        h, w = self.mask.shape
        if self.image.shape != (3, h, w) or self.orient.shape != (h, w):
            raise ValueError("sample rasters must share H x W")


@dataclass
class TileSpec:
    """Overlapping-window tiling: stride = patch - overlap."""

    patch: int = 512
    overlap: int = 256
    pad_to: Optional[int] = None

    def __post_init__(self):
        if not (0 <= self.overlap < self.patch):
            raise ValueError(f"need 0 <= overlap < patch, got overlap={self.overlap}, patch={self.patch}")

    @property
    def stride(self) -> int:
        return self.patch - self.overlap


# ---------------------------------------------------------------------
# orientation ground truth
# ---------------------------------------------------------------------

def angle_to_class(theta_deg: float) -> int:
    """Map an undirected angle (degrees) to a class in {1..36}.

    A tiny epsilon keeps exact bin edges stable under the float noise of
    atan2 round trips (5 degrees must land in the [5,10) bin).
    """
    t = theta_deg % 180.0
    b = int(t / BIN_DEGREES + 1e-7)
    return 1 + min(b, N_ANGLE_BINS - 1)


def orientation_gt(centerlines: Sequence[np.ndarray], h: int, w: int,
                   radius: Optional[float] = None) -> np.ndarray:
    """Per-pixel orientation classes from centerline polylines.

    Pixels within `radius` of a segment get the class of the *nearest*
    segment's tangent angle; everything else is background class 0. The
    default radius is 3 px at width 64, scaled with the raster width.
    An empty centerline set yields an all-background map.
    """
    if radius is None:
        radius = 3.0 * (w / 64.0)
    out = np.zeros((h, w), dtype=np.uint8)
    best = np.full((h, w), np.inf, dtype=np.float64)
    for line in centerlines or []:
        pts = np.asarray(line, dtype=np.float64)
        for (r0, c0), (r1, c1) in zip(pts[:-1], pts[1:]):
            dr, dc = r1 - r0, c1 - c0
            seg2 = dr * dr + dc * dc
            if seg2 == 0.0:
                continue
            theta = np.degrees(np.arctan2(-dr, dc)) % 180.0
            cls = angle_to_class(theta)
            rlo = max(0, int(np.floor(min(r0, r1) - radius)))
            rhi = min(h, int(np.ceil(max(r0, r1) + radius)) + 1)
            clo = max(0, int(np.floor(min(c0, c1) - radius)))
            chi = min(w, int(np.ceil(max(c0, c1) + radius)) + 1)
            if rlo >= rhi or clo >= chi:
                continue
            rr, cc = np.mgrid[rlo:rhi, clo:chi]
            t = np.clip(((rr - r0) * dr + (cc - c0) * dc) / seg2, 0.0, 1.0)
            d2 = (rr - (r0 + t * dr)) ** 2 + (cc - (c0 + t * dc)) ** 2
            hit = (d2 <= radius * radius) & (d2 < best[rlo:rhi, clo:chi])
            best[rlo:rhi, clo:chi][hit] = d2[hit]
            out[rlo:rhi, clo:chi][hit] = cls
    return out


# ---------------------------------------------------------------------
# synthetic generation
# ---------------------------------------------------------------------

def _paint_band(mask: np.ndarray, p0, p1, halfwidth: float):
    h, w = mask.shape
    r0, c0 = p0
    r1, c1 = p1
    dr, dc = r1 - r0, c1 - c0
    seg2 = dr * dr + dc * dc
    if seg2 == 0.0:
        return
    rlo = max(0, int(np.floor(min(r0, r1) - halfwidth - 1)))
    rhi = min(h, int(np.ceil(max(r0, r1) + halfwidth + 1)) + 1)
    clo = max(0, int(np.floor(min(c0, c1) - halfwidth - 1)))
    chi = min(w, int(np.ceil(max(c0, c1) + halfwidth + 1)) + 1)
    if rlo >= rhi or clo >= chi:
        return
    rr, cc = np.mgrid[rlo:rhi, clo:chi]
    t = np.clip(((rr - r0) * dr + (cc - c0) * dc) / seg2, 0.0, 1.0)
    d2 = (rr - (r0 + t * dr)) ** 2 + (cc - (c0 + t * dc)) ** 2
    mask[rlo:rhi, clo:chi] |= d2 <= halfwidth * halfwidth


def _textured_background(rng: np.random.Generator, size: int) -> np.ndarray:
    base = rng.uniform(0.35, 0.65, size=3)
    coarse = rng.uniform(-0.08, 0.08, size=(3, size // 8 + 1, size // 8 + 1))
    coarse = np.repeat(np.repeat(coarse, 8, axis=1), 8, axis=2)[:, :size, :size]
    fine = rng.uniform(-0.02, 0.02, size=(3, size, size))
    img = base[:, None, None] + coarse + fine
    return np.clip(img, 0.0, 1.0)


def _road_layout(rng: np.random.Generator, size: int) -> list[np.ndarray]:
    """Random connected waypoint tree plus an occasional extra edge."""
    margin = max(3, size // 16)
    n = int(rng.integers(3, 7))
    points = []
    while len(points) < n:
        cand = rng.uniform(margin, size - margin, size=2)
        if all(np.hypot(*(cand - p)) > size / 8 for p in points):
            points.append(cand)
    lines = []
    for i in range(1, len(points)):
        j = int(rng.integers(0, i))
        lines.append(np.stack([points[j], points[i]]))
    if rng.random() < 0.5 and len(points) >= 3:
        a, b = rng.choice(len(points), size=2, replace=False)
        lines.append(np.stack([points[a], points[b]]))
    return lines


def make_sample(rng: np.random.Generator, size: int, occlusions: bool = True) -> Sample:
    scale = size / 64.0
    image = _textured_background(rng, size)

    n_rect = int(rng.integers(2, 6))
    for _ in range(n_rect):
        rh = int(rng.integers(4, 17) * scale)
        rw = int(rng.integers(4, 17) * scale)
        r = int(rng.integers(0, max(1, size - rh)))
        c = int(rng.integers(0, max(1, size - rw)))
        color = rng.uniform(0.5, 0.95, size=3) if rng.random() < 0.5 else rng.uniform(0.05, 0.35, size=3)
        image[:, r : r + rh, c : c + rw] = color[:, None, None]

    lines = _road_layout(rng, size)
    mask = np.zeros((size, size), dtype=bool)
    for seg in lines:
        width = float(rng.integers(1, 5)) * scale
        _paint_band(mask, seg[0], seg[1], width / 2.0)

    road_color = rng.uniform(0.12, 0.30)
    road_noise = rng.uniform(-0.03, 0.03, size=(3, size, size))
    image = np.where(mask[None], np.clip(road_color + road_noise, 0.0, 1.0), image)

    if occlusions and rng.random() < 0.5:
        occ = np.zeros((size, size), dtype=bool)
        for _ in range(int(rng.integers(1, 3))):
            p0 = rng.uniform(0, size, size=2)
            p1 = rng.uniform(0, size, size=2)
            _paint_band(occ, p0, p1, float(rng.integers(2, 6)) * scale / 2.0)
        occ_color = rng.uniform(0.55, 0.95, size=3)
        blend = np.where(occ[None], 0.85 * occ_color[:, None, None] + 0.15 * image, image)
        image = blend

    orient = orientation_gt(lines, size, size, radius=3.0 * scale)
    return Sample(
        image=image.astype(np.float32),
        mask=mask.astype(np.uint8),
        orient=orient,
        centerlines=[seg.copy() for seg in lines],
    )


def generate_synthetic(seed: int, count: int, size: int, occlusions: bool = True) -> list[Sample]:
    """Deterministic synthetic dataset: same seed -> bit-identical samples.

    Every sample has at least one road pixel and at least 30% background.
    `size` must be divisible by 16 (the coarsest desk-scale network stage).
    """
    if size < 32 or size % 16:
        raise ValueError(f"size must be >= 32 and divisible by 16, got {size}")
    rng = np.random.default_rng(seed)
    samples = []
    for _ in range(count):
        for _attempt in range(8):
            s = make_sample(rng, size, occlusions=occlusions)
            road_frac = float(s.mask.mean())
            if 0.0 < road_frac <= 0.7:
                samples.append(s)
                break
        else:
            raise RuntimeError("synthetic generator failed to satisfy coverage bounds")
    return samples


# ---------------------------------------------------------------------
# augmentation
# ---------------------------------------------------------------------

def _rot_class(c: np.ndarray, quarter_turns: int) -> np.ndarray:
    """Rotation shifts angle bins by 90 deg per odd quarter turn (mod 180)."""
    if quarter_turns % 2 == 0:
        return c.copy()
    shifted = np.where(c > 0, 1 + (c - 1 + N_ANGLE_BINS // 2) % N_ANGLE_BINS, 0)
    return shifted.astype(c.dtype)


def _flip_class(c: np.ndarray) -> np.ndarray:
    """Mirror maps theta -> 180 - theta: bin 1 fixed, bin k -> 38 - k."""
    out = np.where(c > 1, 38 - c, c)
    return out.astype(c.dtype)


def augment(sample: Sample, seed: int) -> Sample:
    """Random rotation (multiples of 90 deg), horizontal and vertical flips,
    applied consistently to image, mask, orientation classes and
    centerlines. Road-pixel count is preserved exactly."""
    rng = np.random.default_rng(seed)
    k = int(rng.integers(0, 4))
    hflip = bool(rng.random() < 0.5)
    vflip = bool(rng.random() < 0.5)

    img = np.rot90(sample.image, k, axes=(-2, -1))
    mask = np.rot90(sample.mask, k)
    orient = _rot_class(np.rot90(sample.orient, k), k)
    lines = None
    if sample.centerlines is not None:
        h, w = sample.mask.shape
        lines = [pts.copy() for pts in sample.centerlines]
        for _ in range(k):
            lines = [np.stack([w - 1 - pts[:, 1], pts[:, 0]], axis=1) for pts in lines]
            h, w = w, h
        if hflip:
            lines = [np.stack([pts[:, 0], w - 1 - pts[:, 1]], axis=1) for pts in lines]
        if vflip:
            lines = [np.stack([h - 1 - pts[:, 0], pts[:, 1]], axis=1) for pts in lines]

    if hflip:
        img = img[..., ::-1]
        mask = mask[..., ::-1]
        orient = _flip_class(orient[..., ::-1])
    if vflip:
        img = img[..., ::-1, :]
        mask = mask[..., ::-1, :]
        orient = _flip_class(orient[..., ::-1, :])

    return Sample(
        image=np.ascontiguousarray(img),
        mask=np.ascontiguousarray(mask),
        orient=np.ascontiguousarray(orient),
        centerlines=lines,
    )


# ---------------------------------------------------------------------
# multi-scale ground truth
# ---------------------------------------------------------------------

def downscale_gt(raster: np.ndarray, scale: float, kind: str) -> np.ndarray:
    """Prepare ground truth for a reduced output scale.

    Masks downscale by max pooling (a road pixel survives); orientation
    class maps by nearest-neighbor sampling. `scale` in {1, 1/2, 1/4}.
    """
    if scale == 1.0:
        return raster
    factor = int(round(1.0 / scale))
    if factor not in (2, 4):
        raise ValueError(f"unsupported scale {scale}")
    h, w = raster.shape[-2], raster.shape[-1]
    if h % factor or w % factor:
        raise ValueError(f"extents {h}x{w} not divisible by {factor}")
    if kind == "mask":
        shaped = raster.reshape(raster.shape[:-2] + (h // factor, factor, w // factor, factor))
        return shaped.max(axis=(-3, -1))
    if kind == "orient":
        return raster[..., ::factor, ::factor]
    raise ValueError(f"unknown kind {kind!r}")


# ---------------------------------------------------------------------
# tiling
# ---------------------------------------------------------------------

def pad_to(raster: np.ndarray, size: int) -> np.ndarray:
    """Zero-fill bottom/right to `size` x `size` (mask-negative padding)."""
    h, w = raster.shape[-2], raster.shape[-1]
    if h > size or w > size:
        raise ValueError(f"raster {h}x{w} exceeds pad target {size}")
    pad = [(0, 0)] * (raster.ndim - 2) + [(0, size - h), (0, size - w)]
    return np.pad(raster, pad)


def tile_positions(extent: int, spec: TileSpec) -> list[int]:
    if extent < spec.patch:
        raise ValueError(f"extent {extent} smaller than patch {spec.patch}")
    positions = list(range(0, extent - spec.patch + 1, spec.stride))
    if positions[-1] != extent - spec.patch:
        positions.append(extent - spec.patch)
    return positions


def tile(raster: np.ndarray, spec: TileSpec) -> list[tuple[int, int, np.ndarray]]:
    """Crop overlapping patches; returns (row, col, patch) triples."""
    if spec.pad_to is not None:
        raster = pad_to(raster, spec.pad_to)
    h, w = raster.shape[-2], raster.shape[-1]
    out = []
    for r in tile_positions(h, spec):
        for c in tile_positions(w, spec):
            out.append((r, c, np.ascontiguousarray(raster[..., r : r + spec.patch, c : c + spec.patch])))
    return out


def stitch(tiles: list[tuple[int, int, np.ndarray]], shape: tuple, spec: TileSpec) -> np.ndarray:
    """Crop-center reassembly: each patch owns the region nearest its
    center, extended to the raster border for edge patches. Exact inverse
    of `tile` on a raster whose extents align with the tile grid."""
    out = np.zeros(shape, dtype=tiles[0][2].dtype)
    h, w = shape[-2], shape[-1]
    lo_margin = spec.overlap // 2
    hi_margin = spec.overlap - lo_margin
    for r, c, patch in tiles:
        r0 = 0 if r == 0 else r + lo_margin
        r1 = h if r + spec.patch >= h else r + spec.patch - hi_margin
        c0 = 0 if c == 0 else c + lo_margin
        c1 = w if c + spec.patch >= w else c + spec.patch - hi_margin
        out[..., r0:r1, c0:c1] = patch[..., r0 - r : r1 - r, c0 - c : c1 - c]
    return out


# ---------------------------------------------------------------------
# raster I/O and the dataset directory layout
# ---------------------------------------------------------------------

_ACCEPTED_MODES = {"L", "RGB", "RGBA", "P", "1"}


def _open_png(path) -> Image.Image:
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"raster not found: {p}")
    try:
        img = Image.open(p)
        img.load()
    except Exception as exc:
        raise ValueError(f"unreadable raster {p}: {exc}") from exc
    if img.mode not in _ACCEPTED_MODES:
        raise ValueError(f"unsupported bit depth/mode {img.mode!r} in {p}; expected 8-bit L/RGB")
    return img


def load_raster(path) -> np.ndarray:
    """8-bit PNG -> uint8 array, (H,W) for grayscale or (H,W,3) for RGB."""
    img = _open_png(path)
    if img.mode in ("RGBA", "P"):
        img = img.convert("RGB")
    if img.mode == "1":
        img = img.convert("L")
    return np.asarray(img)


def save_raster(arr: np.ndarray, path):
    """Write a mask ({0,1} -> {0,255}), class map, or image to 8-bit PNG."""
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    if arr.ndim == 2:
        a = arr
        if a.dtype == bool or (a.dtype != np.uint8 and a.max(initial=0) <= 1):
            a = (a.astype(np.uint8) * 255)
        elif a.dtype == np.uint8 and a.max(initial=0) <= 1:
            a = a * 255
        Image.fromarray(a.astype(np.uint8), mode="L").save(p)
    elif arr.ndim == 3 and arr.shape[0] == 3:
        a = np.clip(arr, 0.0, 1.0) if arr.dtype.kind == "f" else arr / 255.0
        Image.fromarray((np.transpose(a, (1, 2, 0)) * 255).round().astype(np.uint8), mode="RGB").save(p)
    else:
        raise ValueError(f"cannot encode array of shape {arr.shape}")


def load_mask(path) -> np.ndarray:
    """Binary mask from PNG; RGB ground truth is converted to luminance
    first and thresholded at 128 (road = white)."""
    arr = load_raster(path)
    if arr.ndim == 3:
        arr = np.asarray(Image.fromarray(arr).convert("L"))
    return (arr >= 128).astype(np.uint8)


def load_class_map(path) -> np.ndarray:
    arr = load_raster(path)
    if arr.ndim != 2:
        raise ValueError(f"class map must be single-channel, got shape {arr.shape}")
    return arr


def load_image(path) -> np.ndarray:
    arr = load_raster(path)
    if arr.ndim == 2:
        arr = np.stack([arr] * 3, axis=-1)
    return (np.transpose(arr, (2, 0, 1)).astype(np.float32)) / 255.0


MANIFEST_NAME = "manifest.json"


def save_dataset(samples: Sequence[Sample], splits: Sequence[str], outdir, seed: Optional[int] = None):
    """Write images/, masks/, orient/ PNGs plus a JSON manifest listing
    split membership (see README for the layout)."""
    outdir = Path(outdir)
    if len(samples) != len(splits):
        raise ValueError("need one split label per sample")
    entries = []
    for i, (sample, split) in enumerate(zip(samples, splits)):
        sid = f"{i:05d}"
        save_raster(sample.image, outdir / "images" / f"{sid}.png")
        save_raster(sample.mask, outdir / "masks" / f"{sid}.png")
        orient = Image.fromarray(sample.orient.astype(np.uint8), mode="L")
        (outdir / "orient").mkdir(parents=True, exist_ok=True)
        orient.save(outdir / "orient" / f"{sid}.png")
        entries.append({"id": sid, "split": split})
    manifest = {
        "version": 1,
        "count": len(samples),
        "size": int(samples[0].mask.shape[0]) if samples else 0,
        "seed": seed,
        "samples": entries,
    }
    with open(outdir / MANIFEST_NAME, "w") as fh:
        json.dump(manifest, fh, indent=2)


def load_dataset(directory, split: Optional[str] = None) -> list[Sample]:
    directory = Path(directory)
    manifest_path = directory / MANIFEST_NAME
    if not manifest_path.exists():
        raise FileNotFoundError(f"no {MANIFEST_NAME} in {directory}")
    with open(manifest_path) as fh:
        manifest = json.load(fh)
    samples = []
    for entry in manifest["samples"]:
        if split is not None and entry["split"] != split:
            continue
        sid = entry["id"]
        samples.append(Sample(
            image=load_image(directory / "images" / f"{sid}.png"),
            mask=load_mask(directory / "masks" / f"{sid}.png"),
            orient=load_class_map(directory / "orient" / f"{sid}.png"),
        ))
    return samples
