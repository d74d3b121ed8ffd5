"""Training-free object counting by prompting a segmentation backend."""

from .backend import Backend, BackendCapabilities, DecodeRequest, ScoredMask
from .core import (
    Box,
    FeatureMap,
    PromptPoint,
    PromptSet,
    RleMask,
    box_iou,
    mask_bbox,
    mask_iou,
    rle_decode,
    rle_encode,
    tensor_from_bytes,
    tensor_to_bytes,
)
from .pipelines import (
    CountResult,
    PipelineConfig,
    RunStats,
    auto_grid_size,
    prior_guided_count,
    reference_from_prompts,
    select_reference_boxes_from_text,
    text_count,
    vanilla_count,
)
from .synthetic import SyntheticBackend, SyntheticScene, load_scenes, render_scene

__version__ = "0.1.0"

__all__ = [
    "Backend",
    "BackendCapabilities",
    "Box",
    "CountResult",
    "DecodeRequest",
    "FeatureMap",
    "PipelineConfig",
    "PromptPoint",
    "PromptSet",
    "RleMask",
    "RunStats",
    "ScoredMask",
    "SyntheticBackend",
    "SyntheticScene",
    "auto_grid_size",
    "box_iou",
    "load_scenes",
    "prior_guided_count",
    "reference_from_prompts",
    "select_reference_boxes_from_text",
    "text_count",
    "vanilla_count",
    "mask_bbox",
    "mask_iou",
    "render_scene",
    "rle_decode",
    "rle_encode",
    "tensor_from_bytes",
    "tensor_to_bytes",
    "__version__",
]
