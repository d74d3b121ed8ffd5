"""Serving configuration: weight location, device, cache and queue bounds."""

from __future__ import annotations

import json
from dataclasses import dataclass, fields

from .errors import ModelBackendError


@dataclass(frozen=True)
class BackendConfig:
    checkpoint: str
    device: str = "cpu"
    cache_size: int = 8
    queue_limit: int = 16

    def __post_init__(self):
        if not self.checkpoint:
            raise ModelBackendError("config needs a checkpoint path")
        if self.cache_size < 1 or self.queue_limit < 1:
            raise ModelBackendError("cache_size and queue_limit must be >= 1")


def load_config(path: str) -> BackendConfig:
    """Read a JSON config; unknown keys are rejected to catch typos."""
    try:
        with open(path) as f:
            data = json.load(f)
    except OSError as exc:
        raise ModelBackendError(f"cannot read config '{path}': {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ModelBackendError(f"config '{path}' is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ModelBackendError(f"config '{path}' must be a JSON object")
    known = {f.name for f in fields(BackendConfig)}
    unknown = set(data) - known
    if unknown:
        raise ModelBackendError(
            f"config '{path}' has unknown fields {sorted(unknown)}; known: {sorted(known)}"
        )
    try:
        return BackendConfig(**data)
    except TypeError as exc:
        raise ModelBackendError(f"config '{path}' is incomplete: {exc}") from exc
