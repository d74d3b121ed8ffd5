"""Promptable-segmentation backend protocol.

A backend encodes an image once into a cell-resolution feature map (cached
under a content-hash feature id), then answers any number of decode
requests against that id. Decode requests carry one box or a small point
set, plus an optional semantic embedding the backend may use to reject
off-class masks. Backends that support text also serve a coarse
text-to-image similarity map.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Protocol, runtime_checkable

import numpy as np

from .core import Box, FeatureMap, PromptPoint
from .errors import MalformedPromptError


@dataclass(frozen=True)
class BackendCapabilities:
    supports_semantic_prior: bool
    supports_text: bool
    input_resolution: int  # 0 = native resolution, no internal resize
    feature_channels: int
    feature_stride: int

    def to_dict(self) -> dict:
        return {
            "supports_semantic_prior": self.supports_semantic_prior,
            "supports_text": self.supports_text,
            "input_resolution": self.input_resolution,
            "feature_channels": self.feature_channels,
            "feature_stride": self.feature_stride,
        }

    @staticmethod
    def from_dict(d: dict) -> "BackendCapabilities":
        return BackendCapabilities(
            supports_semantic_prior=bool(d["supports_semantic_prior"]),
            supports_text=bool(d["supports_text"]),
            input_resolution=int(d["input_resolution"]),
            feature_channels=int(d["feature_channels"]),
            feature_stride=int(d["feature_stride"]),
        )


@dataclass(frozen=True)
class DecodeRequest:
    """One box or a small point set against a cached feature id."""

    feature_id: str
    points: tuple[PromptPoint, ...] = field(default_factory=tuple)
    box: Box | None = None
    semantic: np.ndarray | None = None  # (channels,) float32

    def __post_init__(self):
        if not self.points and self.box is None:
            raise MalformedPromptError("decode request needs points or a box")


@dataclass
class ScoredMask:
    """A backend mask and its confidence; similarity score filled later."""

    mask: np.ndarray  # bool (h, w)
    quality: float
    score: float = 0.0

    @property
    def area(self) -> int:
        return int(self.mask.sum())


@runtime_checkable
class Backend(Protocol):
    def capabilities(self) -> BackendCapabilities: ...

    def encode_image(self, image: np.ndarray) -> tuple[str, FeatureMap]: ...

    def decode_masks(self, request: DecodeRequest) -> list[ScoredMask]: ...

    def text_similarity(self, feature_id: str, text: str) -> np.ndarray: ...
