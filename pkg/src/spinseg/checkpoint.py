"""Versioned binary checkpoint container.

Byte layout (documented for external readers; all integers little-endian):

    bytes 0..7    magic b"SPINCKPT"
    bytes 8..11   format version, uint32 (currently 1)
    bytes 12..19  header length in bytes, uint64
    header        UTF-8 JSON:
                    {"dtype": "f32"|"f64",
                     "config": {...network config echo...},
                     "meta": {"epoch": int, "iteration": int, ...},
                     "tensors": [{"name": str, "shape": [int...],
                                  "offset": int, "nbytes": int}, ...]}
    payload       concatenated tensor buffers, row-major, little-endian,
                  in header order; offsets are relative to payload start.

Model parameters are stored under their dotted names; optimizer momentum
buffers (when training state is saved) under "optim/<name>". Round trips
are bit-exact for both float32 and float64 models.
"""

from __future__ import annotations

import dataclasses
import json
import struct
from pathlib import Path
from typing import Optional

import numpy as np

from .model import NetworkConfig, RoadNet
from .nn import Module
from .optim import SGD

MAGIC = b"SPINCKPT"
VERSION = 1
_DTYPES = {"f32": np.float32, "f64": np.float64}


def _dtype_tag(dtype) -> str:
    if np.dtype(dtype) == np.float32:
        return "f32"
    if np.dtype(dtype) == np.float64:
        return "f64"
    raise ValueError(f"unsupported checkpoint dtype {dtype}")


def save_checkpoint(path, model: Module, config: Optional[NetworkConfig] = None,
                    optimizer: Optional[SGD] = None, meta: Optional[dict] = None):
    tensors: list[tuple[str, np.ndarray]] = []
    for name, p in model.named_parameters():
        tensors.append((name, np.ascontiguousarray(p.data)))
    for name, buf in model.named_buffers():
        tensors.append(("buffer/" + name, np.ascontiguousarray(buf)))
    if optimizer is not None:
        for name, v in optimizer.state_dict().items():
            tensors.append(("optim/" + name, np.ascontiguousarray(v)))

    dtype_tag = _dtype_tag(tensors[0][1].dtype) if tensors else "f32"
    index = []
    offset = 0
    for name, arr in tensors:
        nbytes = arr.size * arr.dtype.itemsize
        index.append({"name": name, "shape": list(arr.shape), "offset": offset,
                      "nbytes": nbytes, "dtype": _dtype_tag(arr.dtype) if arr.dtype.kind == "f" else "f64"})
        offset += nbytes
    header = {
        "dtype": dtype_tag,
        "config": dataclasses.asdict(config) if config is not None else None,
        "meta": meta or {},
        "tensors": index,
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for entry, (_, arr) in zip(index, tensors):
            fh.write(arr.astype("<" + ("f4" if entry["dtype"] == "f32" else "f8"), copy=False).tobytes())


def load_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    """Returns (header, tensors by name)."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != MAGIC:
            raise ValueError(f"{path} is not a checkpoint (bad magic {magic!r})")
        version = struct.unpack("<I", fh.read(4))[0]
        if version != VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        hlen = struct.unpack("<Q", fh.read(8))[0]
        header = json.loads(fh.read(hlen).decode("utf-8"))
        payload = fh.read()
    tensors = {}
    for entry in header["tensors"]:
        dt = np.dtype("<f4" if entry["dtype"] == "f32" else "<f8")
        raw = payload[entry["offset"] : entry["offset"] + entry["nbytes"]]
        tensors[entry["name"]] = np.frombuffer(raw, dtype=dt).reshape(entry["shape"]).copy()
    return header, tensors


def restore_model(path) -> tuple[RoadNet, dict, dict[str, np.ndarray]]:
    """Rebuild a model from a checkpoint: returns (model, header, tensors)."""
    header, tensors = load_checkpoint(path)
    if header.get("config") is None:
        raise ValueError("checkpoint carries no network config; cannot rebuild the model")
    cfg = NetworkConfig(**header["config"])
    from . import tensor as T

    dtype = _DTYPES[header["dtype"]]
    with T.default_dtype(dtype):
        model = RoadNet(cfg, seed=0)
    state = {}
    for name, _ in model.named_parameters():
        if name not in tensors:
            raise ValueError(f"checkpoint missing parameter {name!r}")
        state[name] = tensors[name].astype(dtype)
    for name, _ in model.named_buffers():
        key = "buffer/" + name
        if key not in tensors:
            raise ValueError(f"checkpoint missing buffer {name!r}")
        state[name] = tensors[key]
    model.load_state_dict(state)
    return model, header, tensors


def restore_optimizer(optimizer: SGD, tensors: dict[str, np.ndarray]):
    state = {name[len("optim/"):]: arr for name, arr in tensors.items() if name.startswith("optim/")}
    if not state:
        raise ValueError("checkpoint carries no optimizer state")
    optimizer.load_state_dict(state)
