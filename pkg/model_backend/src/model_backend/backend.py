"""Backend protocol implementation around a loaded model.

Model execution is request-serial behind a bounded admission gate: one
request runs at a time, a limited number may wait, and anything beyond
that is refused immediately rather than queued without bound. Encoded
features are cached per image content hash, so repeated decode calls
against one image never re-run the encoder.
"""

from __future__ import annotations

import threading
from collections import OrderedDict
from contextlib import contextmanager

from numpy import ndarray

from promptcount.backend import BackendCapabilities, DecodeRequest, ScoredMask
from promptcount.core import FeatureMap, image_content_hash
from promptcount.errors import (
    BackendRequestError,
    MalformedPromptError,
    UnknownFeatureError,
)

from .config import BackendConfig
from .model import PromptSegmenter, load_segmenter


class ExecutionGate:
    """Serializes work; at most ``limit`` callers may hold or wait for a slot."""

    def __init__(self, limit: int):
        if limit < 1:
            raise ValueError(f"queue limit must be >= 1, got {limit}")
        self._run = threading.Lock()
        self._slots = threading.BoundedSemaphore(limit)

    @contextmanager
    def slot(self):
        if not self._slots.acquire(blocking=False):
            raise BackendRequestError(
                "model execution queue is full; retry when in-flight requests drain"
            )
        try:
            with self._run:
                yield
        finally:
            self._slots.release()


class ModelBackend:
    """Serve a PromptSegmenter through the segmentation backend protocol."""

    def __init__(
        self,
        model: PromptSegmenter,
        cache_size: int = 8,
        queue_limit: int = 16,
    ):
        self._model = model.eval()
        self._gate = ExecutionGate(queue_limit)
        self._lock = threading.Lock()
        self._cache: OrderedDict[str, tuple[FeatureMap, int, int]] = OrderedDict()
        self._cache_size = cache_size

    @classmethod
    def from_config(cls, config: BackendConfig) -> "ModelBackend":
        model = load_segmenter(config.checkpoint, config.device)
        return cls(model, cache_size=config.cache_size, queue_limit=config.queue_limit)

    # -- protocol --

    def capabilities(self) -> BackendCapabilities:
        preset = self._model.preset
        return BackendCapabilities(
            supports_semantic_prior=True,
            supports_text=True,
            input_resolution=preset.input_resolution,
            feature_channels=preset.feature_channels,
            feature_stride=preset.patch_size,
        )

    def encode_image(self, image: ndarray) -> tuple[str, FeatureMap]:
        feature_id = image_content_hash(image)
        with self._lock:
            hit = self._cache.get(feature_id)
            if hit is not None:
                self._cache.move_to_end(feature_id)
                return feature_id, hit[0]
        with self._gate.slot():
            values = self._model.encode_array(image)
        features = FeatureMap(values=values, stride=self._model.preset.patch_size)
        h, w = image.shape[:2]
        with self._lock:
            self._cache[feature_id] = (features, int(h), int(w))
            self._cache.move_to_end(feature_id)
            while len(self._cache) > self._cache_size:
                self._cache.popitem(last=False)
        return feature_id, features

    def decode_masks(self, request: DecodeRequest) -> list[ScoredMask]:
        features, h, w = self._entry(request.feature_id)
        semantic = request.semantic
        if semantic is not None and semantic.shape != (features.channels,):
            raise MalformedPromptError(
                f"semantic embedding must have shape ({features.channels},), "
                f"got {semantic.shape}"
            )
        points = [(float(p.x), float(p.y), int(p.label)) for p in request.points]
        box = None
        if request.box is not None:
            b = request.box
            box = (float(b.x0), float(b.y0), float(b.x1), float(b.y1))
        with self._gate.slot():
            mask, quality = self._model.decode_array(
                features.values, (h, w), points, box, semantic
            )
        if not mask.any():
            return []
        return [ScoredMask(mask=mask, quality=min(max(quality, 0.0), 1.0))]

    def text_similarity(self, feature_id: str, text: str) -> ndarray:
        features, _, _ = self._entry(feature_id)
        with self._gate.slot():
            return self._model.text_map_array(features.values, text)

    # -- internals --

    def _entry(self, feature_id: str) -> tuple[FeatureMap, int, int]:
        with self._lock:
            hit = self._cache.get(feature_id)
            if hit is None:
                raise UnknownFeatureError(
                    f"feature id {feature_id!r} is not cached on this backend"
                )
            self._cache.move_to_end(feature_id)
            return hit
