"""Neural reference implementation of the promptcount backend protocol."""

from importlib import resources
from pathlib import Path

from .backend import ExecutionGate, ModelBackend
from .config import BackendConfig, load_config
from .errors import CheckpointError, ModelBackendError
from .model import PromptSegmenter, build_segmenter, load_segmenter, save_checkpoint
from .presets import PRESETS, ModelPreset, get_preset

__version__ = "0.1.0"


def bundled_asset(name: str) -> Path:
    """Path of a packaged asset (the tiny checkpoint, the demo sample)."""
    return Path(str(resources.files("model_backend") / "assets" / name))


__all__ = [
    "BackendConfig",
    "CheckpointError",
    "ExecutionGate",
    "ModelBackend",
    "ModelBackendError",
    "ModelPreset",
    "PRESETS",
    "PromptSegmenter",
    "build_segmenter",
    "bundled_asset",
    "get_preset",
    "load_config",
    "load_segmenter",
    "save_checkpoint",
]
