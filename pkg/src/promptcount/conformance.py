"""Backend protocol conformance checks.

These checks encode the parts of the backend contract that hold for any
implementation — in-process oracles, wire clients, and real models alike.
Backends ship their own fixtures (an image plus a point known to sit on
an object); the checks assert structural properties, not scene-specific
ground truth.

Use ``run_conformance`` for a collected report, or call the individual
``check_*`` functions (plain asserts) from a test suite.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .backend import Backend, DecodeRequest
from .core import Box, PromptPoint
from .errors import PromptCountError, UnknownFeatureError
from .similarity import masked_average_pool


def check_capabilities(backend: Backend) -> None:
    caps = backend.capabilities()
    assert caps.feature_channels >= 1, "feature_channels must be >= 1"
    assert caps.feature_stride >= 1, "feature_stride must be >= 1"
    assert caps.input_resolution >= 0, "input_resolution must be >= 0 (0 = native)"
    # capability queries must be stable
    assert backend.capabilities() == caps, "capabilities changed between calls"


def check_encode_geometry(backend: Backend, image: np.ndarray) -> None:
    caps = backend.capabilities()
    feature_id, features = backend.encode_image(image)
    assert isinstance(feature_id, str) and feature_id, "feature id must be a non-empty string"
    h, w = image.shape[:2]
    stride = features.stride
    assert stride == caps.feature_stride, "stride must match capabilities"
    assert features.grid_h == -(-h // stride), "feature grid height mismatch"
    assert features.grid_w == -(-w // stride), "feature grid width mismatch"
    assert features.channels == caps.feature_channels, "channel count mismatch"
    assert features.values.dtype == np.float32, "features must be float32"
    assert np.isfinite(features.values).all(), "features must be finite"


def check_encode_determinism(backend: Backend, image: np.ndarray) -> None:
    fid_a, feats_a = backend.encode_image(image)
    fid_b, feats_b = backend.encode_image(image)
    assert fid_a == fid_b, "same image must map to the same feature id"
    assert feats_a.values.tobytes() == feats_b.values.tobytes(), (
        "re-encoding the same image must be byte-identical"
    )


def check_point_decode(
    backend: Backend, image: np.ndarray, object_point: tuple[float, float]
) -> None:
    feature_id, _ = backend.encode_image(image)
    x, y = object_point
    masks = backend.decode_masks(
        DecodeRequest(feature_id=feature_id, points=(PromptPoint(x, y, 1),))
    )
    assert masks, "a point on an object must decode to at least one mask"
    h, w = image.shape[:2]
    for m in masks:
        assert m.mask.dtype == np.bool_, "masks must be boolean"
        assert m.mask.shape == (h, w), "masks must be at image resolution"
        assert 0.0 <= m.quality <= 1.0, "quality must lie in [0, 1]"
        assert m.area > 0, "returned masks must be non-empty"
    best = max(masks, key=lambda m: m.quality)
    assert best.mask[int(y), int(x)], "the best mask must contain the prompt point"


def check_box_decode(
    backend: Backend, image: np.ndarray, object_box: Box
) -> None:
    feature_id, _ = backend.encode_image(image)
    masks = backend.decode_masks(DecodeRequest(feature_id=feature_id, box=object_box))
    assert masks, "a box around an object must decode to at least one mask"
    h, w = image.shape[:2]
    for m in masks:
        assert m.mask.shape == (h, w) and m.mask.dtype == np.bool_
        assert 0.0 <= m.quality <= 1.0
    best = max(masks, key=lambda m: m.quality)
    inside = best.mask[object_box.y0 : object_box.y1, object_box.x0 : object_box.x1]
    assert inside.any(), "the best mask must intersect the prompt box"


def check_decode_determinism(
    backend: Backend, image: np.ndarray, object_point: tuple[float, float]
) -> None:
    feature_id, _ = backend.encode_image(image)
    request = DecodeRequest(
        feature_id=feature_id,
        points=(PromptPoint(object_point[0], object_point[1], 1),),
    )
    first = backend.decode_masks(request)
    second = backend.decode_masks(request)
    assert len(first) == len(second), "decode must be deterministic"
    for a, b in zip(first, second):
        assert a.mask.tobytes() == b.mask.tobytes(), "masks must be byte-identical"
        assert a.quality == b.quality, "qualities must be identical"


def check_semantic_acceptance(
    backend: Backend, image: np.ndarray, object_point: tuple[float, float]
) -> None:
    """A semantic embedding pooled from an object's own mask must not reject it."""
    caps = backend.capabilities()
    if not caps.supports_semantic_prior:
        return
    feature_id, features = backend.encode_image(image)
    x, y = object_point
    plain = backend.decode_masks(
        DecodeRequest(feature_id=feature_id, points=(PromptPoint(x, y, 1),))
    )
    assert plain, "need a decodable object point for the semantic check"
    best = max(plain, key=lambda m: m.quality)
    embedding = masked_average_pool(features, best.mask).astype(np.float32)
    gated = backend.decode_masks(
        DecodeRequest(
            feature_id=feature_id,
            points=(PromptPoint(x, y, 1),),
            semantic=embedding,
        )
    )
    assert gated, "self-derived semantic embedding must not reject the object"


def check_unknown_feature_rejected(backend: Backend) -> None:
    try:
        backend.decode_masks(
            DecodeRequest(
                feature_id="sha256:" + "0" * 64, points=(PromptPoint(1.0, 1.0, 1),)
            )
        )
    except UnknownFeatureError:
        return
    raise AssertionError("decode against an unserved feature id must fail")


def check_text_similarity(backend: Backend, image: np.ndarray, text: str) -> None:
    caps = backend.capabilities()
    if not caps.supports_text:
        return
    feature_id, features = backend.encode_image(image)
    sim = backend.text_similarity(feature_id, text)
    assert sim.ndim == 2, "text similarity must be a 2D map"
    assert sim.shape == (features.grid_h, features.grid_w), (
        "text similarity must be at feature resolution"
    )
    assert np.isfinite(sim).all(), "text similarity must be finite"
    again = backend.text_similarity(feature_id, text)
    assert np.array_equal(sim, again), "text similarity must be deterministic"


@dataclass(frozen=True)
class ConformanceFixture:
    """What a backend must supply to run the shared suite against itself."""

    image: np.ndarray
    object_point: tuple[float, float]
    object_box: Box
    text: str | None = None


def run_conformance(backend: Backend, fixture: ConformanceFixture) -> list[tuple[str, str | None]]:
    """Run every check; returns (check name, failure message or None) pairs."""
    checks = [
        ("capabilities", lambda: check_capabilities(backend)),
        ("encode_geometry", lambda: check_encode_geometry(backend, fixture.image)),
        ("encode_determinism", lambda: check_encode_determinism(backend, fixture.image)),
        ("point_decode", lambda: check_point_decode(backend, fixture.image, fixture.object_point)),
        ("box_decode", lambda: check_box_decode(backend, fixture.image, fixture.object_box)),
        ("decode_determinism", lambda: check_decode_determinism(backend, fixture.image, fixture.object_point)),
        ("semantic_acceptance", lambda: check_semantic_acceptance(backend, fixture.image, fixture.object_point)),
        ("unknown_feature_rejected", lambda: check_unknown_feature_rejected(backend)),
    ]
    if fixture.text is not None:
        checks.append(
            ("text_similarity", lambda: check_text_similarity(backend, fixture.image, fixture.text))
        )
    report: list[tuple[str, str | None]] = []
    for name, run in checks:
        try:
            run()
            report.append((name, None))
        except (AssertionError, PromptCountError) as exc:
            report.append((name, str(exc)))
    return report
