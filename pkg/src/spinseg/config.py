"""Run configuration: flat key-value file with sections.

The file format is INI via `configparser`; unknown sections or keys are
rejected, and parse -> serialize -> parse is the identity on the
dataclass. A copy of the config is written into every run directory so
experiments stay reproducible.
"""

from __future__ import annotations

import configparser
import dataclasses
import io
from dataclasses import dataclass, field
from pathlib import Path

from .model import NetworkConfig
from .optim import Schedule


@dataclass
class TrainConfig:
    epochs: int = 120
    batch_size: int = 4          # desk-scale default; full-scale recipe uses 32
    initial_lr: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 0.0005
    lr_steps: tuple[int, ...] = (50, 90, 110)
    lr_factor: float = 0.1
    augment: bool = True
    log_interval: int = 10
    seed: int = 0

    def schedule(self) -> Schedule:
        return Schedule(initial_lr=self.initial_lr, step_epochs=self.lr_steps,
                        factor=self.lr_factor, total_epochs=self.epochs)


@dataclass
class DataConfig:
    dir: str = ""
    synth_seed: int = 0
    synth_count: int = 0         # > 0: generate in memory instead of loading dir
    synth_size: int = 64


@dataclass
class RunConfig:
    network: NetworkConfig = field(default_factory=NetworkConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)


_SECTIONS = {"network": NetworkConfig, "train": TrainConfig, "data": DataConfig}


def _parse_value(raw: str, target_type):
    raw = raw.strip()
    if target_type is bool:
        if raw.lower() in ("true", "1", "yes"):
            return True
        if raw.lower() in ("false", "0", "no"):
            return False
        raise ValueError(f"expected a boolean, got {raw!r}")
    if target_type is int:
        return int(raw)
    if target_type is float:
        return float(raw)
    if target_type is str:
        return raw
    if target_type in (tuple, tuple[int, ...]):
        if not raw:
            return ()
        return tuple(int(x) for x in raw.split(","))
    raise ValueError(f"unsupported config field type {target_type}")


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    return str(value)


def parse_config(text: str) -> RunConfig:
    """Parse the sectioned key-value format; unknown keys are rejected."""
    parser = configparser.ConfigParser()
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ValueError(f"malformed config: {exc}") from exc
    kwargs = {}
    for section in parser.sections():
        if section not in _SECTIONS:
            raise ValueError(f"unknown config section [{section}]")
        cls = _SECTIONS[section]
        fields = {f.name: f for f in dataclasses.fields(cls)}
        section_kwargs = {}
        for key, raw in parser.items(section):
            if key not in fields:
                raise ValueError(f"unknown key {key!r} in section [{section}]")
            ftype = fields[key].type
            if isinstance(ftype, str):
                named = {"int": int, "float": float, "str": str, "bool": bool,
                         "tuple[int, ...]": tuple}
                if ftype not in named:
                    raise ValueError(f"config field {key!r} has unsupported type {ftype}")
                ftype = named[ftype]
            section_kwargs[key] = _parse_value(raw, ftype)
        kwargs[section] = cls(**section_kwargs)
    return RunConfig(**kwargs)


def serialize_config(cfg: RunConfig) -> str:
    lines = []
    for section, obj in (("network", cfg.network), ("train", cfg.train), ("data", cfg.data)):
        lines.append(f"[{section}]")
        for f in dataclasses.fields(obj):
            lines.append(f"{f.name} = {_format_value(getattr(obj, f.name))}")
        lines.append("")
    return "\n".join(lines)


def load_config(path) -> RunConfig:
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"config file not found: {p}")
    return parse_config(p.read_text())


def save_config(cfg: RunConfig, path):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(serialize_config(cfg))
