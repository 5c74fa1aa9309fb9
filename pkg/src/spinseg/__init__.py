"""Road segmentation with spatial/interaction-space graph reasoning on a
minimal reverse-mode autodiff core."""

from .tensor import Tensor, no_grad, default_dtype
from .model import NetworkConfig, ModelOutput, RoadNet, build_model
from .config import RunConfig, TrainConfig, DataConfig, parse_config, serialize_config
from .data import Sample, TileSpec, generate_synthetic
from .metrics import MetricsReport, RoadGraph, apls, mask_to_graph, pixel_metrics, relaxed_iou

__version__ = "0.1.0"

__all__ = [
    "Tensor",
    "no_grad",
    "default_dtype",
    "NetworkConfig",
    "ModelOutput",
    "RoadNet",
    "build_model",
    "RunConfig",
    "TrainConfig",
    "DataConfig",
    "parse_config",
    "serialize_config",
    "Sample",
    "TileSpec",
    "generate_synthetic",
    "MetricsReport",
    "RoadGraph",
    "apls",
    "mask_to_graph",
    "pixel_metrics",
    "relaxed_iou",
    "__version__",
]
